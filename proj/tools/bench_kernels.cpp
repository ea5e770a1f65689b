#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <vector>

#include "disen/kernels.hpp"
#include "disen/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

// Times the OpenMP kernels against their serial reference twins on a few
// shapes and verifies that both produce bit-identical output. Usage:
// bench_kernels [reps]

namespace {

using Clock = std::chrono::steady_clock;

double median_ms(int reps, const std::function<void()>& fn) {
    fn();  // warm-up
    std::vector<double> times;
    for (int r = 0; r < reps; ++r) {
        auto t0 = Clock::now();
        fn();
        auto t1 = Clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

std::vector<float> random_buffer(std::size_t n, disen::Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.uniform() * 2.0 - 1.0);
    return v;
}

void report(const char* kernel, const char* size, int reps,
            const std::function<void()>& serial, const std::function<void()>& parallel,
            const float* out_serial, const float* out_parallel, std::size_t out_n) {
    double ref_ms = median_ms(reps, serial);
    double par_ms = median_ms(reps, parallel);
    bool equal = std::memcmp(out_serial, out_parallel, out_n * sizeof(float)) == 0;
    std::printf("%-18s %-16s %10.3f %12.3f %9.2fx  %s\n", kernel, size, ref_ms, par_ms,
                ref_ms / par_ms, equal ? "bit-equal" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    int reps = argc > 1 ? std::atoi(argv[1]) : 5;
    if (reps < 1) reps = 1;

#ifdef _OPENMP
    std::printf("OpenMP enabled, %d threads\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled at build time; both columns run serially\n");
#endif
    std::printf("%-18s %-16s %10s %12s %9s\n", "kernel", "size", "serial ms", "parallel ms",
                "speedup");

    disen::Rng rng(99);
    namespace k = disen::kernels;

    for (std::size_t n : {128ul, 256ul, 512ul}) {
        auto A = random_buffer(n * n, rng);
        auto B = random_buffer(n * n, rng);
        std::vector<float> C1(n * n), C2(n * n);
        char size[32];
        std::snprintf(size, sizeof size, "%zux%zux%zu", n, n, n);
        report("gemm_nn", size, reps,
               [&] { k::ref::gemm_nn(n, n, n, A.data(), B.data(), C1.data(), false); },
               [&] { k::gemm_nn(n, n, n, A.data(), B.data(), C2.data(), false); }, C1.data(),
               C2.data(), n * n);
        report("gemm_nt", size, reps,
               [&] { k::ref::gemm_nt(n, n, n, A.data(), B.data(), C1.data(), false); },
               [&] { k::gemm_nt(n, n, n, A.data(), B.data(), C2.data(), false); }, C1.data(),
               C2.data(), n * n);
        report("gemm_tn", size, reps,
               [&] { k::ref::gemm_tn(n, n, n, A.data(), B.data(), C1.data(), false); },
               [&] { k::gemm_tn(n, n, n, A.data(), B.data(), C2.data(), false); }, C1.data(),
               C2.data(), n * n);
    }

    {
        std::size_t m = 4096, n = 512;
        auto X = random_buffer(m * n, rng);
        std::vector<float> Y1(m * n), Y2(m * n), norms1(m), norms2(m);
        char size[32];
        std::snprintf(size, sizeof size, "%zux%zu", m, n);
        report("softmax_rows", size, reps,
               [&] { k::ref::softmax_rows(m, n, X.data(), Y1.data()); },
               [&] { k::softmax_rows(m, n, X.data(), Y2.data()); }, Y1.data(), Y2.data(), m * n);
        report("l2_normalize", size, reps,
               [&] { k::ref::l2_normalize_rows(m, n, X.data(), Y1.data(), norms1.data()); },
               [&] { k::l2_normalize_rows(m, n, X.data(), Y2.data(), norms2.data()); }, Y1.data(),
               Y2.data(), m * n);
    }
    return 0;
}
