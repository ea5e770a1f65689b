#pragma once

#include <cmath>
#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

// Dense compute kernels. The primary versions parallelize the outer loop with
// OpenMP when the problem is big enough; every output element is produced by
// exactly one thread with a fixed inner loop order, so results are identical
// for any thread count. kernels::ref holds the plain serial implementations
// used as the oracle in tests and in the kernel benchmark.

namespace disen::kernels {

// Work threshold below which parallel dispatch is not worth the fork.
inline constexpr std::size_t kOmpMinWork = std::size_t(1) << 16;

namespace ref {

// C(m x n) = A(m x k) * B(k x n), accumulate adds into C instead of overwriting.
template <class Real>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* A, const Real* B, Real* C,
             bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            Real acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[p * n + j];
            if (accumulate)
                C[i * n + j] += acc;
            else
                C[i * n + j] = acc;
        }
    }
}

// C(m x n) = A(m x k) * B(n x k)^T
template <class Real>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* A, const Real* B, Real* C,
             bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            Real acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
            if (accumulate)
                C[i * n + j] += acc;
            else
                C[i * n + j] = acc;
        }
    }
}

// C(m x n) = A(k x m)^T * B(k x n)
template <class Real>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* A, const Real* B, Real* C,
             bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            Real acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += A[p * m + i] * B[p * n + j];
            if (accumulate)
                C[i * n + j] += acc;
            else
                C[i * n + j] = acc;
        }
    }
}

// Row-wise softmax with max subtraction, X and Y are m x n.
template <class Real>
void softmax_rows(std::size_t m, std::size_t n, const Real* X, Real* Y) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* x = X + i * n;
        Real* y = Y + i * n;
        Real mx = x[0];
        for (std::size_t j = 1; j < n; ++j)
            if (x[j] > mx) mx = x[j];
        Real sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        Real inv = Real(1) / (sum + Real(1e-12));
        for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
    }
}

// Row-wise L2 normalisation; norms out param (length m) receives the raw row norms.
template <class Real>
void l2_normalize_rows(std::size_t m, std::size_t n, const Real* X, Real* Y, Real* norms) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* x = X + i * n;
        Real ss = 0;
        for (std::size_t j = 0; j < n; ++j) ss += x[j] * x[j];
        Real nm = std::sqrt(ss);
        norms[i] = nm;
        Real inv = Real(1) / (nm + Real(1e-12));
        for (std::size_t j = 0; j < n; ++j) Y[i * n + j] = x[j] * inv;
    }
}

}  // namespace ref

template <class Real>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* A, const Real* B, Real* C,
             bool accumulate) {
#ifdef _OPENMP
    if (m * n * k >= kOmpMinWork) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(m); ++i)
            ref::gemm_nn<Real>(1, n, k, A + std::size_t(i) * k, B, C + std::size_t(i) * n,
                               accumulate);
        return;
    }
#endif
    ref::gemm_nn(m, n, k, A, B, C, accumulate);
}

template <class Real>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* A, const Real* B, Real* C,
             bool accumulate) {
#ifdef _OPENMP
    if (m * n * k >= kOmpMinWork) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(m); ++i)
            ref::gemm_nt<Real>(1, n, k, A + std::size_t(i) * k, B, C + std::size_t(i) * n,
                               accumulate);
        return;
    }
#endif
    ref::gemm_nt(m, n, k, A, B, C, accumulate);
}

template <class Real>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* A, const Real* B, Real* C,
             bool accumulate) {
#ifdef _OPENMP
    if (m * n * k >= kOmpMinWork) {
        // Column blocks of the output keep per-thread writes disjoint.
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(m); ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                Real acc = 0;
                for (std::size_t p = 0; p < k; ++p)
                    acc += A[p * m + std::size_t(i)] * B[p * n + j];
                if (accumulate)
                    C[std::size_t(i) * n + j] += acc;
                else
                    C[std::size_t(i) * n + j] = acc;
            }
        }
        return;
    }
#endif
    ref::gemm_tn(m, n, k, A, B, C, accumulate);
}

template <class Real>
void softmax_rows(std::size_t m, std::size_t n, const Real* X, Real* Y) {
#ifdef _OPENMP
    if (m * n >= kOmpMinWork) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(m); ++i)
            ref::softmax_rows<Real>(1, n, X + std::size_t(i) * n, Y + std::size_t(i) * n);
        return;
    }
#endif
    ref::softmax_rows(m, n, X, Y);
}

template <class Real>
void l2_normalize_rows(std::size_t m, std::size_t n, const Real* X, Real* Y, Real* norms) {
#ifdef _OPENMP
    if (m * n >= kOmpMinWork) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(m); ++i)
            ref::l2_normalize_rows<Real>(1, n, X + std::size_t(i) * n, Y + std::size_t(i) * n,
                                         norms + std::size_t(i));
        return;
    }
#endif
    ref::l2_normalize_rows(m, n, X, Y, norms);
}

}  // namespace disen::kernels
