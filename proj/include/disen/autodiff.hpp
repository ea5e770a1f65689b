#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "disen/kernels.hpp"
#include "disen/tensor.hpp"

// Reverse-mode automatic differentiation over dense tensors. Ops evaluate
// eagerly; each result node keeps its parents and a pull-style backward
// closure. backward() runs the closures in reverse topological order and
// accumulates (never overwrites) into parent gradients.

namespace disen {

inline constexpr double kEps = 1e-12;

// Test hook: when set, gradients flowing through ops with this name are
// scaled during backward, so a gradient check must fail.
inline std::string g_corrupt_backward_op;

template <class Real>
struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (grad.numel() == 0) grad = Tensor<Real>(value.shape);
    }
};

template <class Real>
class Value {
public:
    Value() = default;
    explicit Value(std::shared_ptr<Node<Real>> n) : n_(std::move(n)) {}

    static Value constant(Tensor<Real> t) {
        auto n = std::make_shared<Node<Real>>();
        n->value = std::move(t);
        return Value(std::move(n));
    }

    static Value param(Tensor<Real> t) {
        auto n = std::make_shared<Node<Real>>();
        n->value = std::move(t);
        n->requires_grad = true;
        n->ensure_grad();
        return Value(std::move(n));
    }

    bool valid() const { return n_ != nullptr; }
    Node<Real>& node() const { return *n_; }
    const std::shared_ptr<Node<Real>>& ptr() const { return n_; }

    const Tensor<Real>& val() const { return n_->value; }
    Tensor<Real>& val_mut() { return n_->value; }
    const Tensor<Real>& grad() const { return n_->grad; }
    bool requires_grad() const { return n_->requires_grad; }

    const Shape& shape() const { return n_->value.shape; }
    std::size_t rows() const { return n_->value.rows(); }
    std::size_t cols() const { return n_->value.cols(); }
    Real scalar() const { return n_->value.data[0]; }

private:
    std::shared_ptr<Node<Real>> n_;
};

namespace detail {

template <class Real>
Value<Real> make_op(const char* op, Tensor<Real> out,
                    std::vector<std::shared_ptr<Node<Real>>> parents,
                    std::function<void(Node<Real>&)> backprop) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(out);
    n->op = op;
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
        n->ensure_grad();
        for (auto& p : n->parents)
            if (p->requires_grad) p->ensure_grad();
    }
    return Value<Real>(std::move(n));
}

}  // namespace detail

/// Run reverse-mode accumulation from a scalar root.
template <class Real>
void backward(const Value<Real>& root) {
    if (root.val().numel() != 1)
        throw std::invalid_argument("backward: root must be scalar, got shape " +
                                    shape_str(root.shape()));
    if (!root.requires_grad()) return;

    // Iterative post-order over the parent DAG.
    std::vector<Node<Real>*> order;
    std::unordered_set<Node<Real>*> seen;
    std::vector<std::pair<Node<Real>*, std::size_t>> stack;
    stack.emplace_back(&root.node(), 0);
    seen.insert(&root.node());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node<Real>* p = n->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node().grad.data[0] = Real(1);
    const bool corrupting = !g_corrupt_backward_op.empty();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<Real>* n = *it;
        if (!n->backprop) continue;
        if (corrupting && g_corrupt_backward_op == n->op)
            for (auto& g : n->grad.data) g *= Real(1.01);
        n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise and broadcasting ops
// ---------------------------------------------------------------------------

template <class Real>
Value<Real> add(const Value<Real>& a, const Value<Real>& b) {
    check_same_shape(a.val(), b.val(), "add");
    Tensor<Real> out = a.val();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b.val().data[i];
    return detail::make_op<Real>("add", std::move(out), {a.ptr(), b.ptr()}, [](Node<Real>& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad.data[i] += n.grad.data[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad.data[i] += n.grad.data[i];
        }
    });
}

template <class Real>
Value<Real> sub(const Value<Real>& a, const Value<Real>& b) {
    check_same_shape(a.val(), b.val(), "sub");
    Tensor<Real> out = a.val();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b.val().data[i];
    return detail::make_op<Real>("sub", std::move(out), {a.ptr(), b.ptr()}, [](Node<Real>& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad.data[i] += n.grad.data[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad.data[i] -= n.grad.data[i];
        }
    });
}

/// Elementwise (Hadamard) product.
template <class Real>
Value<Real> mul(const Value<Real>& a, const Value<Real>& b) {
    check_same_shape(a.val(), b.val(), "mul");
    Tensor<Real> out = a.val();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b.val().data[i];
    return detail::make_op<Real>("mul", std::move(out), {a.ptr(), b.ptr()}, [](Node<Real>& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad.data[i] += n.grad.data[i] * bv.data[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad.data[i] += n.grad.data[i] * av.data[i];
        }
    });
}

template <class Real>
Value<Real> div(const Value<Real>& a, const Value<Real>& b) {
    check_same_shape(a.val(), b.val(), "div");
    Tensor<Real> out = a.val();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] /= b.val().data[i];
    return detail::make_op<Real>("div", std::move(out), {a.ptr(), b.ptr()}, [](Node<Real>& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        for (std::size_t i = 0; i < n.grad.numel(); ++i) {
            Real inv = Real(1) / bv.data[i];
            if (n.parents[0]->requires_grad) n.parents[0]->grad.data[i] += n.grad.data[i] * inv;
            if (n.parents[1]->requires_grad)
                n.parents[1]->grad.data[i] -= n.grad.data[i] * av.data[i] * inv * inv;
        }
    });
}

template <class Real>
Value<Real> mul_scalar(const Value<Real>& a, Real c) {
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x *= c;
    return detail::make_op<Real>("mul_scalar", std::move(out), {a.ptr()}, [c](Node<Real>& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            n.parents[0]->grad.data[i] += n.grad.data[i] * c;
    });
}

template <class Real>
Value<Real> add_scalar(const Value<Real>& a, Real c) {
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x += c;
    return detail::make_op<Real>("add_scalar", std::move(out), {a.ptr()}, [](Node<Real>& n) {
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            n.parents[0]->grad.data[i] += n.grad.data[i];
    });
}

template <class Real>
Value<Real> neg(const Value<Real>& a) {
    return mul_scalar(a, Real(-1));
}

/// out[i,j] = m[i,j] + v[j]  (bias broadcast over rows)
template <class Real>
Value<Real> add_rowvec(const Value<Real>& m, const Value<Real>& v) {
    if (m.val().rank() != 2 || v.val().rank() != 1 || m.cols() != v.val().numel())
        throw std::invalid_argument("add_rowvec: incompatible shapes " + shape_str(m.shape()) +
                                    " and " + shape_str(v.shape()));
    Tensor<Real> out = m.val();
    std::size_t R = m.rows(), C = m.cols();
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) out.data[i * C + j] += v.val().data[j];
    return detail::make_op<Real>("add_rowvec", std::move(out), {m.ptr(), v.ptr()},
                                 [R, C](Node<Real>& n) {
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) {
                if (n.parents[0]->requires_grad)
                    n.parents[0]->grad.data[i * C + j] += n.grad.data[i * C + j];
                if (n.parents[1]->requires_grad)
                    n.parents[1]->grad.data[j] += n.grad.data[i * C + j];
            }
    });
}

/// out[i,j] = m[i,j] * v[i]  (per-row scaling)
template <class Real>
Value<Real> scale_rows(const Value<Real>& m, const Value<Real>& v) {
    if (m.val().rank() != 2 || v.val().rank() != 1 || m.rows() != v.val().numel())
        throw std::invalid_argument("scale_rows: incompatible shapes " + shape_str(m.shape()) +
                                    " and " + shape_str(v.shape()));
    std::size_t R = m.rows(), C = m.cols();
    Tensor<Real> out = m.val();
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) out.data[i * C + j] *= v.val().data[i];
    return detail::make_op<Real>("scale_rows", std::move(out), {m.ptr(), v.ptr()},
                                 [R, C](Node<Real>& n) {
        const auto& mv = n.parents[0]->value;
        const auto& vv = n.parents[1]->value;
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) {
                if (n.parents[0]->requires_grad)
                    n.parents[0]->grad.data[i * C + j] += n.grad.data[i * C + j] * vv.data[i];
                if (n.parents[1]->requires_grad)
                    n.parents[1]->grad.data[i] += n.grad.data[i * C + j] * mv.data[i * C + j];
            }
    });
}

template <class Real>
Value<Real> recip(const Value<Real>& a) {
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x = Real(1) / x;
    return detail::make_op<Real>("recip", std::move(out), {a.ptr()}, [](Node<Real>& n) {
        const auto& y = n.value;
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            n.parents[0]->grad.data[i] -= n.grad.data[i] * y.data[i] * y.data[i];
    });
}

template <class Real>
Value<Real> sigmoid(const Value<Real>& a) {
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x = Real(1) / (Real(1) + std::exp(-x));
    return detail::make_op<Real>("sigmoid", std::move(out), {a.ptr()}, [](Node<Real>& n) {
        const auto& y = n.value;
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            n.parents[0]->grad.data[i] += n.grad.data[i] * y.data[i] * (Real(1) - y.data[i]);
    });
}

template <class Real>
Value<Real> tanh_(const Value<Real>& a) {
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x = std::tanh(x);
    return detail::make_op<Real>("tanh", std::move(out), {a.ptr()}, [](Node<Real>& n) {
        const auto& y = n.value;
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            n.parents[0]->grad.data[i] += n.grad.data[i] * (Real(1) - y.data[i] * y.data[i]);
    });
}

template <class Real>
Value<Real> log_(const Value<Real>& a) {
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x = std::log(x);
    return detail::make_op<Real>("log", std::move(out), {a.ptr()}, [](Node<Real>& n) {
        const auto& x = n.parents[0]->value;
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            n.parents[0]->grad.data[i] += n.grad.data[i] / x.data[i];
    });
}

template <class Real>
Value<Real> sqrt_(const Value<Real>& a) {
    Tensor<Real> out = a.val();
    for (auto& x : out.data) x = std::sqrt(x);
    return detail::make_op<Real>("sqrt", std::move(out), {a.ptr()}, [](Node<Real>& n) {
        const auto& y = n.value;
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            n.parents[0]->grad.data[i] += n.grad.data[i] / (Real(2) * y.data[i] + Real(kEps));
    });
}

/// max(x, floor); gradient passes only where x > floor.
template <class Real>
Value<Real> clamp_min(const Value<Real>& a, Real floor_v) {
    Tensor<Real> out = a.val();
    for (auto& x : out.data)
        if (x < floor_v) x = floor_v;
    return detail::make_op<Real>("clamp_min", std::move(out), {a.ptr()},
                                 [floor_v](Node<Real>& n) {
        const auto& x = n.parents[0]->value;
        for (std::size_t i = 0; i < n.grad.numel(); ++i)
            if (x.data[i] > floor_v) n.parents[0]->grad.data[i] += n.grad.data[i];
    });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class Real>
Value<Real> matmul(const Value<Real>& a, const Value<Real>& b) {
    if (a.val().rank() != 2 || b.val().rank() != 2 || a.cols() != b.rows())
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<Real> out(Shape{m, n});
    kernels::gemm_nn(m, n, k, a.val().data.data(), b.val().data.data(), out.data.data(), false);
    return detail::make_op<Real>("matmul", std::move(out), {a.ptr(), b.ptr()},
                                 [m, n, k](Node<Real>& n_) {
        const auto& av = n_.parents[0]->value;
        const auto& bv = n_.parents[1]->value;
        if (n_.parents[0]->requires_grad)
            kernels::gemm_nt(m, k, n, n_.grad.data.data(), bv.data.data(),
                             n_.parents[0]->grad.data.data(), true);
        if (n_.parents[1]->requires_grad)
            kernels::gemm_tn(k, n, m, av.data.data(), n_.grad.data.data(),
                             n_.parents[1]->grad.data.data(), true);
    });
}

/// a (m x k) times b (n x k) transposed -> m x n
template <class Real>
Value<Real> matmul_nt(const Value<Real>& a, const Value<Real>& b) {
    if (a.val().rank() != 2 || b.val().rank() != 2 || a.cols() != b.cols())
        throw std::invalid_argument("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor<Real> out(Shape{m, n});
    kernels::gemm_nt(m, n, k, a.val().data.data(), b.val().data.data(), out.data.data(), false);
    return detail::make_op<Real>("matmul_nt", std::move(out), {a.ptr(), b.ptr()},
                                 [m, n, k](Node<Real>& n_) {
        const auto& av = n_.parents[0]->value;
        const auto& bv = n_.parents[1]->value;
        if (n_.parents[0]->requires_grad)
            kernels::gemm_nn(m, k, n, n_.grad.data.data(), bv.data.data(),
                             n_.parents[0]->grad.data.data(), true);
        if (n_.parents[1]->requires_grad)
            kernels::gemm_tn(n, k, m, n_.grad.data.data(), av.data.data(),
                             n_.parents[1]->grad.data.data(), true);
    });
}

/// a (k x m) transposed times b (k x n) -> m x n
template <class Real>
Value<Real> matmul_tn(const Value<Real>& a, const Value<Real>& b) {
    if (a.val().rank() != 2 || b.val().rank() != 2 || a.rows() != b.rows())
        throw std::invalid_argument("matmul_tn: incompatible shapes " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    Tensor<Real> out(Shape{m, n});
    kernels::gemm_tn(m, n, k, a.val().data.data(), b.val().data.data(), out.data.data(), false);
    return detail::make_op<Real>("matmul_tn", std::move(out), {a.ptr(), b.ptr()},
                                 [m, n, k](Node<Real>& n_) {
        const auto& av = n_.parents[0]->value;
        const auto& bv = n_.parents[1]->value;
        if (n_.parents[0]->requires_grad)
            kernels::gemm_nt(k, m, n, bv.data.data(), n_.grad.data.data(),
                             n_.parents[0]->grad.data.data(), true);
        if (n_.parents[1]->requires_grad)
            kernels::gemm_nn(k, n, m, av.data.data(), n_.grad.data.data(),
                             n_.parents[1]->grad.data.data(), true);
    });
}

/// Matrix (m x n) times vector (n) -> vector (m)
template <class Real>
Value<Real> matvec(const Value<Real>& m, const Value<Real>& v) {
    if (m.val().rank() != 2 || v.val().rank() != 1 || m.cols() != v.val().numel())
        throw std::invalid_argument("matvec: incompatible shapes " + shape_str(m.shape()) +
                                    " and " + shape_str(v.shape()));
    std::size_t R = m.rows(), C = m.cols();
    Tensor<Real> out(Shape{R});
    for (std::size_t i = 0; i < R; ++i) {
        Real acc = 0;
        for (std::size_t j = 0; j < C; ++j) acc += m.val().data[i * C + j] * v.val().data[j];
        out.data[i] = acc;
    }
    return detail::make_op<Real>("matvec", std::move(out), {m.ptr(), v.ptr()},
                                 [R, C](Node<Real>& n) {
        const auto& mv = n.parents[0]->value;
        const auto& vv = n.parents[1]->value;
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) {
                if (n.parents[0]->requires_grad)
                    n.parents[0]->grad.data[i * C + j] += n.grad.data[i] * vv.data[j];
                if (n.parents[1]->requires_grad)
                    n.parents[1]->grad.data[j] += n.grad.data[i] * mv.data[i * C + j];
            }
    });
}

/// Matrix (m x n) transposed times vector (m) -> vector (n)
template <class Real>
Value<Real> matvec_t(const Value<Real>& m, const Value<Real>& v) {
    if (m.val().rank() != 2 || v.val().rank() != 1 || m.rows() != v.val().numel())
        throw std::invalid_argument("matvec_t: incompatible shapes " + shape_str(m.shape()) +
                                    " and " + shape_str(v.shape()));
    std::size_t R = m.rows(), C = m.cols();
    Tensor<Real> out(Shape{C});
    for (std::size_t j = 0; j < C; ++j) {
        Real acc = 0;
        for (std::size_t i = 0; i < R; ++i) acc += m.val().data[i * C + j] * v.val().data[i];
        out.data[j] = acc;
    }
    return detail::make_op<Real>("matvec_t", std::move(out), {m.ptr(), v.ptr()},
                                 [R, C](Node<Real>& n) {
        const auto& mv = n.parents[0]->value;
        const auto& vv = n.parents[1]->value;
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) {
                if (n.parents[0]->requires_grad)
                    n.parents[0]->grad.data[i * C + j] += n.grad.data[j] * vv.data[i];
                if (n.parents[1]->requires_grad)
                    n.parents[1]->grad.data[i] += n.grad.data[j] * mv.data[i * C + j];
            }
    });
}

template <class Real>
Value<Real> transpose(const Value<Real>& a) {
    if (a.val().rank() != 2) throw std::invalid_argument("transpose: rank-2 input required");
    std::size_t R = a.rows(), C = a.cols();
    Tensor<Real> out(Shape{C, R});
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) out.data[j * R + i] = a.val().data[i * C + j];
    return detail::make_op<Real>("transpose", std::move(out), {a.ptr()}, [R, C](Node<Real>& n) {
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j)
                n.parents[0]->grad.data[i * C + j] += n.grad.data[j * R + i];
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class Real>
Value<Real> sum(const Value<Real>& a) {
    Real s = 0;
    for (Real x : a.val().data) s += x;
    return detail::make_op<Real>("sum", Tensor<Real>::scalar(s), {a.ptr()}, [](Node<Real>& n) {
        Real g = n.grad.data[0];
        for (auto& d : n.parents[0]->grad.data) d += g;
    });
}

template <class Real>
Value<Real> mean(const Value<Real>& a) {
    Real s = 0;
    for (Real x : a.val().data) s += x;
    Real inv = Real(1) / Real(a.val().numel());
    return detail::make_op<Real>("mean", Tensor<Real>::scalar(s * inv), {a.ptr()},
                                 [inv](Node<Real>& n) {
        Real g = n.grad.data[0] * inv;
        for (auto& d : n.parents[0]->grad.data) d += g;
    });
}

template <class Real>
Value<Real> row_sums(const Value<Real>& a) {
    if (a.val().rank() != 2) throw std::invalid_argument("row_sums: rank-2 input required");
    std::size_t R = a.rows(), C = a.cols();
    Tensor<Real> out(Shape{R});
    for (std::size_t i = 0; i < R; ++i) {
        Real s = 0;
        for (std::size_t j = 0; j < C; ++j) s += a.val().data[i * C + j];
        out.data[i] = s;
    }
    return detail::make_op<Real>("row_sums", std::move(out), {a.ptr()}, [R, C](Node<Real>& n) {
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j)
                n.parents[0]->grad.data[i * C + j] += n.grad.data[i];
    });
}

template <class Real>
Value<Real> dot(const Value<Real>& a, const Value<Real>& b) {
    check_same_shape(a.val(), b.val(), "dot");
    Real s = 0;
    for (std::size_t i = 0; i < a.val().numel(); ++i) s += a.val().data[i] * b.val().data[i];
    return detail::make_op<Real>("dot", Tensor<Real>::scalar(s), {a.ptr(), b.ptr()},
                                 [](Node<Real>& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        Real g = n.grad.data[0];
        for (std::size_t i = 0; i < av.numel(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad.data[i] += g * bv.data[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad.data[i] += g * av.data[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Row-structured ops
// ---------------------------------------------------------------------------

/// Softmax along the last axis; rank-1 inputs are treated as one row.
template <class Real>
Value<Real> softmax(const Value<Real>& a) {
    std::size_t R = a.val().rank() == 2 ? a.rows() : 1;
    std::size_t C = a.val().rank() == 2 ? a.cols() : a.val().numel();
    if (C == 0) throw std::invalid_argument("softmax: empty axis");
    Tensor<Real> out(a.shape());
    kernels::softmax_rows(R, C, a.val().data.data(), out.data.data());
    return detail::make_op<Real>("softmax", std::move(out), {a.ptr()}, [R, C](Node<Real>& n) {
        const auto& y = n.value;
        for (std::size_t i = 0; i < R; ++i) {
            Real gy = 0;
            for (std::size_t j = 0; j < C; ++j)
                gy += n.grad.data[i * C + j] * y.data[i * C + j];
            for (std::size_t j = 0; j < C; ++j)
                n.parents[0]->grad.data[i * C + j] +=
                    y.data[i * C + j] * (n.grad.data[i * C + j] - gy);
        }
    });
}

/// L2-normalize along the last axis; rank-1 inputs are treated as one row.
/// Denominator is norm + 1e-12 so degenerate rows stay finite.
template <class Real>
Value<Real> l2_normalize(const Value<Real>& a) {
    std::size_t R = a.val().rank() == 2 ? a.rows() : 1;
    std::size_t C = a.val().rank() == 2 ? a.cols() : a.val().numel();
    Tensor<Real> out(a.shape());
    auto norms = std::make_shared<std::vector<Real>>(R);
    kernels::l2_normalize_rows(R, C, a.val().data.data(), out.data.data(), norms->data());
    return detail::make_op<Real>("l2_normalize", std::move(out), {a.ptr()},
                                 [R, C, norms](Node<Real>& n) {
        const auto& x = n.parents[0]->value;
        for (std::size_t i = 0; i < R; ++i) {
            Real nm = (*norms)[i];
            Real d = nm + Real(kEps);
            Real gx = 0;
            for (std::size_t j = 0; j < C; ++j)
                gx += n.grad.data[i * C + j] * x.data[i * C + j];
            Real corr = nm > Real(kEps) ? gx / (d * d * nm) : Real(0);
            for (std::size_t j = 0; j < C; ++j)
                n.parents[0]->grad.data[i * C + j] +=
                    n.grad.data[i * C + j] / d - corr * x.data[i * C + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class Real>
Value<Real> concat_cols(const std::vector<Value<Real>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    std::size_t R = parts[0].rows(), C = 0;
    for (const auto& p : parts) {
        if (p.val().rank() != 2 || p.rows() != R)
            throw std::invalid_argument("concat_cols: row mismatch");
        C += p.cols();
    }
    Tensor<Real> out(Shape{R, C});
    std::vector<std::size_t> offsets;
    std::vector<std::shared_ptr<Node<Real>>> parents;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        parents.push_back(p.ptr());
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j)
                out.data[i * C + off + j] = p.val().data[i * p.cols() + j];
        off += p.cols();
    }
    return detail::make_op<Real>("concat_cols", std::move(out), std::move(parents),
                                 [R, C, offsets](Node<Real>& n) {
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
            auto& p = n.parents[pi];
            if (!p->requires_grad) continue;
            std::size_t pc = p->value.cols(), off2 = offsets[pi];
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t j = 0; j < pc; ++j)
                    p->grad.data[i * pc + j] += n.grad.data[i * C + off2 + j];
        }
    });
}

template <class Real>
Value<Real> concat_vecs(const std::vector<Value<Real>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_vecs: no inputs");
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.val().rank() != 1) throw std::invalid_argument("concat_vecs: rank-1 inputs required");
        total += p.val().numel();
    }
    Tensor<Real> out(Shape{total});
    std::vector<std::size_t> offsets;
    std::vector<std::shared_ptr<Node<Real>>> parents;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        parents.push_back(p.ptr());
        std::copy(p.val().data.begin(), p.val().data.end(), out.data.begin() + off);
        off += p.val().numel();
    }
    return detail::make_op<Real>("concat_vecs", std::move(out), std::move(parents),
                                 [offsets](Node<Real>& n) {
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
            auto& p = n.parents[pi];
            if (!p->requires_grad) continue;
            for (std::size_t j = 0; j < p->value.numel(); ++j)
                p->grad.data[j] += n.grad.data[offsets[pi] + j];
        }
    });
}

/// Columns [c0, c1) of a matrix.
template <class Real>
Value<Real> slice_cols(const Value<Real>& a, std::size_t c0, std::size_t c1) {
    if (a.val().rank() != 2 || c1 > a.cols() || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range on shape " + shape_str(a.shape()));
    std::size_t R = a.rows(), C = a.cols(), W = c1 - c0;
    Tensor<Real> out(Shape{R, W});
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < W; ++j) out.data[i * W + j] = a.val().data[i * C + c0 + j];
    return detail::make_op<Real>("slice_cols", std::move(out), {a.ptr()},
                                 [R, C, W, c0](Node<Real>& n) {
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < W; ++j)
                n.parents[0]->grad.data[i * C + c0 + j] += n.grad.data[i * W + j];
    });
}

/// Elements [i0, i1) of a vector.
template <class Real>
Value<Real> slice_vec(const Value<Real>& a, std::size_t i0, std::size_t i1) {
    if (a.val().rank() != 1 || i1 > a.val().numel() || i0 >= i1)
        throw std::invalid_argument("slice_vec: bad range on shape " + shape_str(a.shape()));
    std::size_t W = i1 - i0;
    Tensor<Real> out(Shape{W});
    for (std::size_t j = 0; j < W; ++j) out.data[j] = a.val().data[i0 + j];
    return detail::make_op<Real>("slice_vec", std::move(out), {a.ptr()}, [W, i0](Node<Real>& n) {
        for (std::size_t j = 0; j < W; ++j) n.parents[0]->grad.data[i0 + j] += n.grad.data[j];
    });
}

/// Rows of a matrix selected by index; repeated indices accumulate on backward.
template <class Real>
Value<Real> gather_rows(const Value<Real>& a, std::vector<std::size_t> idx) {
    if (a.val().rank() != 2) throw std::invalid_argument("gather_rows: rank-2 input required");
    std::size_t C = a.cols();
    for (auto r : idx)
        if (r >= a.rows()) throw std::invalid_argument("gather_rows: row index out of range");
    Tensor<Real> out(Shape{idx.size(), C});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < C; ++j) out.data[i * C + j] = a.val().data[idx[i] * C + j];
    return detail::make_op<Real>("gather_rows", std::move(out), {a.ptr()},
                                 [C, idx = std::move(idx)](Node<Real>& n) {
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < C; ++j)
                n.parents[0]->grad.data[idx[i] * C + j] += n.grad.data[i * C + j];
    });
}

/// Single row of a matrix as a vector.
template <class Real>
Value<Real> row(const Value<Real>& a, std::size_t i) {
    if (a.val().rank() != 2 || i >= a.rows())
        throw std::invalid_argument("row: index out of range");
    std::size_t C = a.cols();
    Tensor<Real> out(Shape{C});
    for (std::size_t j = 0; j < C; ++j) out.data[j] = a.val().data[i * C + j];
    return detail::make_op<Real>("row", std::move(out), {a.ptr()}, [C, i](Node<Real>& n) {
        for (std::size_t j = 0; j < C; ++j)
            n.parents[0]->grad.data[i * C + j] += n.grad.data[j];
    });
}

/// Single element of a vector as a scalar.
template <class Real>
Value<Real> select(const Value<Real>& a, std::size_t i) {
    if (a.val().rank() != 1 || i >= a.val().numel())
        throw std::invalid_argument("select: index out of range");
    return detail::make_op<Real>("select", Tensor<Real>::scalar(a.val().data[i]), {a.ptr()},
                                 [i](Node<Real>& n) {
        n.parents[0]->grad.data[i] += n.grad.data[0];
    });
}

/// Stack rank-1 vectors of equal length into a matrix.
template <class Real>
Value<Real> stack_rows(const std::vector<Value<Real>>& rows_in) {
    if (rows_in.empty()) throw std::invalid_argument("stack_rows: no inputs");
    std::size_t C = rows_in[0].val().numel();
    Tensor<Real> out(Shape{rows_in.size(), C});
    std::vector<std::shared_ptr<Node<Real>>> parents;
    for (std::size_t i = 0; i < rows_in.size(); ++i) {
        if (rows_in[i].val().rank() != 1 || rows_in[i].val().numel() != C)
            throw std::invalid_argument("stack_rows: length mismatch");
        parents.push_back(rows_in[i].ptr());
        std::copy(rows_in[i].val().data.begin(), rows_in[i].val().data.end(),
                  out.data.begin() + i * C);
    }
    return detail::make_op<Real>("stack_rows", std::move(out), std::move(parents),
                                 [C](Node<Real>& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            auto& p = n.parents[i];
            if (!p->requires_grad) continue;
            for (std::size_t j = 0; j < C; ++j) p->grad.data[j] += n.grad.data[i * C + j];
        }
    });
}

/// Stack scalars into a vector.
template <class Real>
Value<Real> stack_scalars(const std::vector<Value<Real>>& scalars) {
    if (scalars.empty()) throw std::invalid_argument("stack_scalars: no inputs");
    Tensor<Real> out(Shape{scalars.size()});
    std::vector<std::shared_ptr<Node<Real>>> parents;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].val().numel() != 1)
            throw std::invalid_argument("stack_scalars: scalar inputs required");
        parents.push_back(scalars[i].ptr());
        out.data[i] = scalars[i].val().data[0];
    }
    return detail::make_op<Real>("stack_scalars", std::move(out), std::move(parents),
                                 [](Node<Real>& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i)
            if (n.parents[i]->requires_grad) n.parents[i]->grad.data[0] += n.grad.data[i];
    });
}

// ---------------------------------------------------------------------------
// Distance-correlation building blocks
// ---------------------------------------------------------------------------

/// Pairwise Euclidean distances between rows of X (n x p) -> (n x n).
/// Gradient is skipped for pairs closer than the epsilon guard.
template <class Real>
Value<Real> pairwise_distances(const Value<Real>& x) {
    if (x.val().rank() != 2) throw std::invalid_argument("pairwise_distances: rank-2 required");
    std::size_t R = x.rows(), C = x.cols();
    Tensor<Real> out(Shape{R, R});
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = i + 1; j < R; ++j) {
            Real ss = 0;
            for (std::size_t c = 0; c < C; ++c) {
                Real d = x.val().data[i * C + c] - x.val().data[j * C + c];
                ss += d * d;
            }
            Real dist = std::sqrt(ss);
            out.data[i * R + j] = dist;
            out.data[j * R + i] = dist;
        }
    return detail::make_op<Real>("pairwise_distances", std::move(out), {x.ptr()},
                                 [R, C](Node<Real>& n) {
        const auto& xv = n.parents[0]->value;
        const auto& dist = n.value;
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = i + 1; j < R; ++j) {
                Real d = dist.data[i * R + j];
                if (d <= Real(kEps)) continue;
                Real g = (n.grad.data[i * R + j] + n.grad.data[j * R + i]) / d;
                for (std::size_t c = 0; c < C; ++c) {
                    Real diff = xv.data[i * C + c] - xv.data[j * C + c];
                    n.parents[0]->grad.data[i * C + c] += g * diff;
                    n.parents[0]->grad.data[j * C + c] -= g * diff;
                }
            }
    });
}

/// Double centering of a square matrix: subtract row means and column means,
/// add the grand mean. The operator is its own adjoint.
template <class Real>
Value<Real> double_center(const Value<Real>& a) {
    if (a.val().rank() != 2 || a.rows() != a.cols())
        throw std::invalid_argument("double_center: square matrix required");
    std::size_t n = a.rows();
    auto center = [n](const std::vector<Real>& src, std::vector<Real>& dst) {
        std::vector<Real> rm(n, Real(0)), cm(n, Real(0));
        Real gm = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                Real v = src[i * n + j];
                rm[i] += v;
                cm[j] += v;
                gm += v;
            }
        Real inv = Real(1) / Real(n);
        for (auto& v : rm) v *= inv;
        for (auto& v : cm) v *= inv;
        gm *= inv * inv;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                dst[i * n + j] = src[i * n + j] - rm[i] - cm[j] + gm;
    };
    Tensor<Real> out(a.shape());
    center(a.val().data, out.data);
    return detail::make_op<Real>("double_center", std::move(out), {a.ptr()},
                                 [center](Node<Real>& n_) {
        std::vector<Real> gc(n_.grad.data.size());
        center(n_.grad.data, gc);
        for (std::size_t i = 0; i < gc.size(); ++i) n_.parents[0]->grad.data[i] += gc[i];
    });
}

}  // namespace disen
