#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "disen/autodiff.hpp"

namespace disen {

/// Directed graph over the unique items of one session. Node slots follow
/// first occurrence; an edge (u,v) exists iff v was clicked right after u
/// somewhere in the session, multiplicity ignored.
struct SessionGraph {
    std::vector<std::size_t> nodes;  // unique item indices
    std::vector<std::size_t> alias;  // sequence position -> node slot
    std::vector<std::vector<std::size_t>> out_edges;  // per slot: successor slots
    std::vector<std::vector<std::size_t>> in_edges;   // per slot: predecessor slots

    std::size_t size() const { return nodes.size(); }
};

inline SessionGraph build_graph(const std::vector<std::size_t>& sequence) {
    if (sequence.empty()) throw std::invalid_argument("build_graph: empty sequence");
    SessionGraph g;
    g.alias.reserve(sequence.size());
    for (auto item : sequence) {
        std::size_t slot = g.nodes.size();
        for (std::size_t s = 0; s < g.nodes.size(); ++s)
            if (g.nodes[s] == item) {
                slot = s;
                break;
            }
        if (slot == g.nodes.size()) {
            g.nodes.push_back(item);
            g.out_edges.emplace_back();
            g.in_edges.emplace_back();
        }
        g.alias.push_back(slot);
    }
    for (std::size_t i = 0; i + 1 < g.alias.size(); ++i) {
        std::size_t u = g.alias[i], v = g.alias[i + 1];
        auto& outs = g.out_edges[u];
        if (std::find(outs.begin(), outs.end(), v) == outs.end()) {
            outs.push_back(v);
            g.in_edges[v].push_back(u);
        }
    }
    return g;
}

/// Per-factor normalized similarity matrices, indexed [factor].
template <class Real>
struct FactorSimilarityMatrices {
    std::vector<Value<Real>> a_in;
    std::vector<Value<Real>> a_out;
};

inline constexpr double kSimFloor = 1e-8;

/// Dot-product similarity of two factor chunks, clamped below so edge
/// weights stay positive and row sums cannot vanish.
template <class Real>
Value<Real> raw_similarity(const Value<Real>& c_i, const Value<Real>& c_j) {
    if (c_i.val().rank() != 1 || !c_i.val().same_shape(c_j.val()))
        throw std::invalid_argument("raw_similarity: chunk shapes differ: " +
                                    shape_str(c_i.shape()) + " vs " + shape_str(c_j.shape()));
    return clamp_min(dot(c_i, c_j), Real(kSimFloor));
}

namespace detail {

/// Mask similarity scores to the given adjacency and normalize each row over
/// its neighborhood. Rows without edges come out exactly zero: the mask
/// zeroes them and the denominator gets +1 so the division is a no-op.
template <class Real>
Value<Real> masked_row_normalize(const Value<Real>& sims,
                                 const std::vector<std::vector<std::size_t>>& nbrs) {
    std::size_t m = sims.rows();
    Tensor<Real> mask(Shape{m, m});
    Tensor<Real> empty_fix(Shape{m});
    for (std::size_t i = 0; i < m; ++i) {
        for (auto j : nbrs[i]) mask.at(i, j) = Real(1);
        if (nbrs[i].empty()) empty_fix[i] = Real(1);
    }
    auto masked = mul(sims, Value<Real>::constant(std::move(mask)));
    auto denom = add(row_sums(masked), Value<Real>::constant(std::move(empty_fix)));
    return scale_rows(masked, recip(denom));
}

}  // namespace detail

/// Differentiable in/out matrices from the current per-factor node chunks
/// (each chunks[k] is size() x d/K). Gradients flow back into the chunks.
template <class Real>
FactorSimilarityMatrices<Real> build_similarity_matrices(const SessionGraph& g,
                                                         const std::vector<Value<Real>>& chunks) {
    FactorSimilarityMatrices<Real> out;
    for (const auto& c : chunks) {
        if (c.val().rank() != 2 || c.rows() != g.size())
            throw std::invalid_argument("build_similarity_matrices: chunk matrix shape " +
                                        shape_str(c.shape()) + " does not cover " +
                                        std::to_string(g.size()) + " nodes");
        auto sims = clamp_min(matmul_nt(c, c), Real(kSimFloor));
        out.a_out.push_back(detail::masked_row_normalize(sims, g.out_edges));
        out.a_in.push_back(detail::masked_row_normalize(sims, g.in_edges));
    }
    return out;
}

/// Similarity-free variant: every neighborhood row is uniform. Constant
/// values, shared across factors.
template <class Real>
FactorSimilarityMatrices<Real> build_uniform_matrices(const SessionGraph& g,
                                                      std::size_t n_factors) {
    std::size_t m = g.size();
    auto uniform = [m](const std::vector<std::vector<std::size_t>>& nbrs) {
        Tensor<Real> a(Shape{m, m});
        for (std::size_t i = 0; i < m; ++i)
            for (auto j : nbrs[i]) a.at(i, j) = Real(1) / Real(nbrs[i].size());
        return Value<Real>::constant(std::move(a));
    };
    auto a_out = uniform(g.out_edges);
    auto a_in = uniform(g.in_edges);
    FactorSimilarityMatrices<Real> out;
    for (std::size_t k = 0; k < n_factors; ++k) {
        out.a_out.push_back(a_out);
        out.a_in.push_back(a_in);
    }
    return out;
}

}  // namespace disen
