#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "disen/autodiff.hpp"
#include "disen/data.hpp"
#include "disen/graph.hpp"
#include "disen/params.hpp"
#include "disen/rng.hpp"

namespace disen {

struct ModelConfig {
    std::size_t n_items = 0;  // vocabulary size N, set from the dataset
    std::size_t d = 100;      // embedding size
    std::size_t K = 5;        // latent factors
    std::size_t T = 3;        // gated propagation steps per layer
    std::size_t L = 2;        // item-embedding-learning layers
    double lambda = 10.0;     // independence regularizer weight
    double dropout = 0.1;
    bool use_factor_similarity = true;   // false: uniform neighbor weights
    bool use_residual_attention = true;  // false: layer output replaces input
    bool share_ggnn_across_factors = true;
    bool share_attention_across_factors = true;

    std::size_t dk() const { return d / K; }

    void validate() const {
        if (n_items == 0) throw std::invalid_argument("config: n_items must be positive");
        if (K == 0 || d == 0 || d % K != 0)
            throw std::invalid_argument("config: d (" + std::to_string(d) +
                                        ") must be a positive multiple of K (" +
                                        std::to_string(K) + ")");
        if (T < 1 || L < 1) throw std::invalid_argument("config: T and L must be at least 1");
        if (lambda < 0) throw std::invalid_argument("config: lambda must be nonnegative");
        if (dropout < 0 || dropout >= 1)
            throw std::invalid_argument("config: dropout must lie in [0,1)");
    }
};

/// All learnable tensors, registered by name in a fixed order.
template <class Real>
struct ModelParams {
    ModelConfig cfg;
    ParamStore<Real> store;

    Value<Real>& operator[](const std::string& name) { return store.get(name); }

    Value<Real>& ggnn(const char* base, std::size_t k) {
        return store.get(cfg.share_ggnn_across_factors
                             ? std::string("ggnn.") + base
                             : std::string("ggnn.") + base + "." + std::to_string(k));
    }
    Value<Real>& attn(const char* base, std::size_t k) {
        return store.get(cfg.share_attention_across_factors
                             ? std::string("attn.") + base
                             : std::string("attn.") + base + "." + std::to_string(k));
    }
};

/// The full parameter registry for a config: names and shapes in the fixed
/// registration order that initialization, optimizers, and checkpoints all
/// share.
inline std::vector<std::pair<std::string, Shape>> param_manifest(const ModelConfig& cfg) {
    cfg.validate();
    std::size_t d = cfg.d, dk = cfg.dk();
    std::vector<std::pair<std::string, Shape>> out;
    auto add = [&](std::string name, Shape shape) {
        out.emplace_back(std::move(name), std::move(shape));
    };

    add("embed.E", {cfg.n_items, d});
    for (std::size_t k = 0; k < cfg.K; ++k) {
        add("chunk.W." + std::to_string(k), {d, dk});
        add("chunk.b." + std::to_string(k), {dk});
    }
    auto add_ggnn = [&](const std::string& suffix) {
        add("ggnn.H_in" + suffix, {dk, dk});
        add("ggnn.H_out" + suffix, {dk, dk});
        add("ggnn.b_in" + suffix, {dk});
        add("ggnn.b_out" + suffix, {dk});
        add("ggnn.W_z" + suffix, {dk, 2 * dk});
        add("ggnn.U_z" + suffix, {dk, dk});
        add("ggnn.W_r" + suffix, {dk, 2 * dk});
        add("ggnn.U_r" + suffix, {dk, dk});
        add("ggnn.W_o" + suffix, {dk, 2 * dk});
        add("ggnn.U_o" + suffix, {dk, dk});
    };
    if (cfg.share_ggnn_across_factors)
        add_ggnn("");
    else
        for (std::size_t k = 0; k < cfg.K; ++k) add_ggnn("." + std::to_string(k));

    add("res.W_q", {d, d});
    add("res.W_p", {d, d});
    add("res.w_f", {d});

    auto add_attn = [&](const std::string& suffix) {
        add("attn.W_1" + suffix, {dk, dk});
        add("attn.W_2" + suffix, {dk, dk});
        add("attn.b" + suffix, {dk});
        add("attn.q" + suffix, {dk});
    };
    if (cfg.share_attention_across_factors)
        add_attn("");
    else
        for (std::size_t k = 0; k < cfg.K; ++k) add_attn("." + std::to_string(k));

    add("fuse.W_3", {dk, 2 * dk});
    return out;
}

/// Gaussian(0, 0.1) initialization for every parameter, in manifest order.
template <class Real>
ModelParams<Real> init_params(const ModelConfig& cfg, Rng& rng) {
    ModelParams<Real> p;
    p.cfg = cfg;
    for (auto& [name, shape] : param_manifest(cfg))
        p.store.add(name, gaussian_init<Real>(std::move(shape), rng));
    return p;
}

// ---------------------------------------------------------------------------
// Model operations
// ---------------------------------------------------------------------------

/// Split rows into K factor chunks: chunk k = l2norm(sigmoid(E W_k) + b_k).
/// Input is any R x d matrix (single vectors go in as 1 x d).
template <class Real>
std::vector<Value<Real>> chunk_embeddings(ModelParams<Real>& p, const Value<Real>& embs) {
    std::vector<Value<Real>> chunks;
    chunks.reserve(p.cfg.K);
    for (std::size_t k = 0; k < p.cfg.K; ++k) {
        auto& W = p.store.get("chunk.W." + std::to_string(k));
        auto& b = p.store.get("chunk.b." + std::to_string(k));
        chunks.push_back(l2_normalize(add_rowvec(sigmoid(matmul(embs, W)), b)));
    }
    return chunks;
}

/// One gated propagation step for every factor. chunks[k] holds the m x d/K
/// node states; matrices are the per-factor neighbor weights.
template <class Real>
std::vector<Value<Real>> ggnn_step(ModelParams<Real>& p, const std::vector<Value<Real>>& chunks,
                                   const FactorSimilarityMatrices<Real>& mats) {
    std::vector<Value<Real>> next;
    next.reserve(chunks.size());
    for (std::size_t k = 0; k < chunks.size(); ++k) {
        const auto& C = chunks[k];
        auto a_in = add_rowvec(matmul_nt(matmul(mats.a_in[k], C), p.ggnn("H_in", k)),
                               p.ggnn("b_in", k));
        auto a_out = add_rowvec(matmul_nt(matmul(mats.a_out[k], C), p.ggnn("H_out", k)),
                                p.ggnn("b_out", k));
        auto a = concat_cols<Real>({a_in, a_out});

        auto z = sigmoid(add(matmul_nt(a, p.ggnn("W_z", k)), matmul_nt(C, p.ggnn("U_z", k))));
        auto r = sigmoid(add(matmul_nt(a, p.ggnn("W_r", k)), matmul_nt(C, p.ggnn("U_r", k))));
        auto cand = tanh_(
            add(matmul_nt(a, p.ggnn("W_o", k)), matmul_nt(mul(r, C), p.ggnn("U_o", k))));
        // c_next = (1 - z) (.) c + z (.) cand, written as c - z(.)c + z(.)cand
        auto out = add(sub(C, mul(z, C)), mul(z, cand));

        const auto& v = out.val();
        for (std::size_t i = 0; i < v.rows(); ++i)
            for (std::size_t j = 0; j < v.cols(); ++j)
                if (!std::isfinite(double(v.at(i, j))))
                    throw std::runtime_error("ggnn_step: non-finite state at factor " +
                                             std::to_string(k) + ", node " + std::to_string(i));
        next.push_back(std::move(out));
    }
    return next;
}

/// Blend each row of the previous layer's output with the propagated one:
/// alpha = sigmoid(w_f . sigmoid(W_q e_prev + W_p e_out)) per row, result
/// alpha * e_prev + (1 - alpha) * e_out. The outer sigmoid keeps the blend
/// a convex combination.
template <class Real>
Value<Real> residual_fuse(ModelParams<Real>& p, const Value<Real>& e_prev,
                          const Value<Real>& e_out) {
    check_same_shape(e_prev.val(), e_out.val(), "residual_fuse");
    auto pre = sigmoid(add(matmul_nt(e_prev, p.store.get("res.W_q")),
                           matmul_nt(e_out, p.store.get("res.W_p"))));
    auto alpha = sigmoid(matvec(pre, p.store.get("res.w_f")));
    auto ones = Value<Real>::constant(Tensor<Real>(Shape{e_prev.rows()}, Real(1)));
    return add(scale_rows(e_prev, alpha), scale_rows(e_out, sub(ones, alpha)));
}

/// Distance correlation between the rows of X and Y, in [0, 1]. Defined as 0
/// when either argument has (near-)identical rows, a structural branch taken
/// at graph construction.
template <class Real>
Value<Real> distance_correlation(const Value<Real>& x, const Value<Real>& y) {
    if (x.rows() != y.rows())
        throw std::invalid_argument("distance_correlation: row counts differ");
    std::size_t n = x.rows();
    if (n < 2) return Value<Real>::constant(Tensor<Real>::scalar(Real(0)));
    Real inv_n2 = Real(1) / Real(n * n);

    auto A = double_center(pairwise_distances(x));
    auto B = double_center(pairwise_distances(y));
    auto dvar2_x = mul_scalar(sum(mul(A, A)), inv_n2);
    auto dvar2_y = mul_scalar(sum(mul(B, B)), inv_n2);
    if (dvar2_x.scalar() <= Real(kEps) || dvar2_y.scalar() <= Real(kEps))
        return Value<Real>::constant(Tensor<Real>::scalar(Real(0)));

    auto dcov2 = clamp_min(mul_scalar(sum(mul(A, B)), inv_n2), Real(0));
    auto dcov = sqrt_(add_scalar(dcov2, Real(kEps)));
    auto denom = sqrt_(mul(sqrt_(add_scalar(dvar2_x, Real(kEps))),
                           sqrt_(add_scalar(dvar2_y, Real(kEps)))));
    return div(dcov, denom);
}

/// Independence penalty over all unordered factor pairs of the initial
/// chunk matrices. Zero for a single factor or a single node.
template <class Real>
Value<Real> disentanglement_loss(const std::vector<Value<Real>>& chunks0) {
    auto total = Value<Real>::constant(Tensor<Real>::scalar(Real(0)));
    for (std::size_t k = 0; k < chunks0.size(); ++k)
        for (std::size_t k2 = k + 1; k2 < chunks0.size(); ++k2)
            total = add(total, distance_correlation(chunks0[k], chunks0[k2]));
    return total;
}

template <class Real>
struct SessionEmbedding {
    Value<Real> s_l;    // last item, dimension d
    Value<Real> s_g;    // attention-pooled global preference, dimension d
    Value<Real> s_h;    // fused session embedding, dimension d
    Value<Real> alpha;  // items x factors attention weights
};

/// Pool per-position item embeddings (n x d, one row per click) into the
/// session embedding. The mask selects real positions; padded rows never
/// reach the attention sums.
template <class Real>
SessionEmbedding<Real> session_embed(ModelParams<Real>& p, const Value<Real>& item_embs,
                                     const std::vector<char>& mask) {
    if (item_embs.val().rank() != 2 || item_embs.cols() != p.cfg.d)
        throw std::invalid_argument("session_embed: expected n x d embeddings, got " +
                                    shape_str(item_embs.shape()));
    if (mask.size() != item_embs.rows())
        throw std::invalid_argument("session_embed: mask length mismatch");
    std::vector<std::size_t> real;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) real.push_back(i);
    if (real.empty()) throw std::invalid_argument("session_embed: all positions masked");

    auto embs = real.size() == item_embs.rows() ? item_embs : gather_rows(item_embs, real);
    std::size_t n = real.size(), dk = p.cfg.dk();

    std::vector<Value<Real>> sh_parts, sg_parts, alpha_cols;
    for (std::size_t k = 0; k < p.cfg.K; ++k) {
        auto C = slice_cols(embs, k * dk, (k + 1) * dk);
        auto c_last = row(C, n - 1);
        auto pre = sigmoid(add_rowvec(add_rowvec(matmul_nt(C, p.attn("W_2", k)),
                                                 matvec(p.attn("W_1", k), c_last)),
                                      p.attn("b", k)));
        auto alpha_k = matvec(pre, p.attn("q", k));
        auto s_g_k = matvec_t(C, alpha_k);
        auto s_h_k = matvec(p.store.get("fuse.W_3"), concat_vecs<Real>({c_last, s_g_k}));
        sh_parts.push_back(std::move(s_h_k));
        sg_parts.push_back(std::move(s_g_k));
        alpha_cols.push_back(std::move(alpha_k));
    }

    SessionEmbedding<Real> out;
    out.s_l = row(embs, n - 1);
    out.s_g = concat_vecs(sg_parts);
    out.s_h = concat_vecs(sh_parts);
    out.alpha = transpose(stack_rows(alpha_cols));  // n x K
    return out;
}

/// Softmax scores over all candidates: z_i = <s_h, e_i> via the chunked
/// candidate table (N x d), which equals the factor-wise dot sum.
template <class Real>
Value<Real> score_items(const Value<Real>& s_h, const Value<Real>& candidate_chunks) {
    if (candidate_chunks.cols() != s_h.val().numel())
        throw std::invalid_argument("score_items: dimension mismatch");
    return softmax(matvec(candidate_chunks, s_h));
}

/// Two-term cross entropy against a one-hot target:
/// -(log yhat[t] + sum_{i != t} log(1 - yhat[i])), logs epsilon-clamped.
template <class Real>
Value<Real> prediction_loss(const Value<Real>& yhat, std::size_t target) {
    if (yhat.val().rank() != 1 || target >= yhat.val().numel())
        throw std::invalid_argument("prediction_loss: bad target");
    auto logp = log_(clamp_min(yhat, Real(kEps)));
    auto ones = Value<Real>::constant(Tensor<Real>(yhat.shape(), Real(1)));
    auto logq = log_(clamp_min(sub(ones, yhat), Real(kEps)));
    auto pos = select(logp, target);
    auto neg_terms = sub(sum(logq), select(logq, target));
    return neg(add(pos, neg_terms));
}

template <class Real>
Value<Real> total_loss(const Value<Real>& loss_c, const Value<Real>& loss_dec, double lambda) {
    return add(loss_c, mul_scalar(loss_dec, Real(lambda)));
}

template <class Real>
struct ForwardResult {
    Value<Real> yhat;      // batch x N probabilities
    Value<Real> loss_c;    // mean prediction loss
    Value<Real> loss_dec;  // mean independence loss
    Value<Real> total;     // loss_c + lambda * loss_dec
};

namespace detail {

template <class Real>
Value<Real> dropout_rows(const Value<Real>& x, double rate, Rng& rng) {
    Tensor<Real> mask(x.shape());
    Real scale = Real(1.0 / (1.0 - rate));
    for (auto& v : mask.data) v = rng.uniform() < rate ? Real(0) : scale;
    return mul(x, Value<Real>::constant(std::move(mask)));
}

}  // namespace detail

/// Full model pass over one batch. `dropout_rng` drives the between-layer
/// dropout and is only consulted when training with a positive rate.
template <class Real>
ForwardResult<Real> forward(ModelParams<Real>& p, const Batch& batch, bool training,
                            Rng* dropout_rng = nullptr) {
    const auto& cfg = p.cfg;
    cfg.validate();
    if (batch.size() == 0) throw std::invalid_argument("forward: empty batch");
    bool dropping = training && cfg.dropout > 0;
    if (dropping && !dropout_rng)
        throw std::invalid_argument("forward: dropout requires an rng in training mode");

    // Candidate table, chunked once and shared by every session: scoring uses
    // the chunk transform of the global embeddings, and sessions draw their
    // initial node states from the same rows.
    auto table = concat_cols(chunk_embeddings(p, p.store.get("embed.E")));

    std::vector<Value<Real>> yhat_rows, losses, dec_losses;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        try {
            std::vector<std::size_t> seq(batch.lengths[s]);
            for (std::size_t j = 0; j < seq.size(); ++j) {
                seq[j] = batch.item_at(s, j);
                if (seq[j] >= cfg.n_items)
                    throw std::invalid_argument("item index " + std::to_string(seq[j]) +
                                                " outside the vocabulary");
            }
            auto g = build_graph(seq);

            auto init = gather_rows(table, g.nodes);  // m x d, the l=0,t=0 state
            std::size_t dk = cfg.dk();
            std::vector<Value<Real>> chunks0;
            for (std::size_t k = 0; k < cfg.K; ++k)
                chunks0.push_back(slice_cols(init, k * dk, (k + 1) * dk));
            dec_losses.push_back(disentanglement_loss(chunks0));

            auto mats = cfg.use_factor_similarity
                            ? build_similarity_matrices(g, chunks0)
                            : build_uniform_matrices<Real>(g, cfg.K);

            auto e_prev = init;
            for (std::size_t l = 0; l < cfg.L; ++l) {
                std::vector<Value<Real>> chunks;
                for (std::size_t k = 0; k < cfg.K; ++k)
                    chunks.push_back(slice_cols(e_prev, k * dk, (k + 1) * dk));
                for (std::size_t t = 0; t < cfg.T; ++t) chunks = ggnn_step(p, chunks, mats);
                auto e_out = concat_cols(chunks);
                auto fused =
                    cfg.use_residual_attention ? residual_fuse(p, e_prev, e_out) : e_out;
                if (dropping && l + 1 < cfg.L)
                    fused = detail::dropout_rows(fused, cfg.dropout, *dropout_rng);
                e_prev = fused;
            }

            auto item_embs = gather_rows(e_prev, g.alias);  // back to click positions
            auto se = session_embed(p, item_embs, std::vector<char>(g.alias.size(), 1));
            auto yhat = score_items(se.s_h, table);
            yhat_rows.push_back(yhat);
            losses.push_back(prediction_loss(yhat, batch.labels[s]));
        } catch (const std::exception& e) {
            throw std::runtime_error("forward: session " + std::to_string(s) + ": " + e.what());
        }
    }

    ForwardResult<Real> out;
    out.yhat = stack_rows(yhat_rows);
    out.loss_c = mean(stack_scalars(losses));
    out.loss_dec = mean(stack_scalars(dec_losses));
    out.total = total_loss(out.loss_c, out.loss_dec, cfg.lambda);
    return out;
}

}  // namespace disen
