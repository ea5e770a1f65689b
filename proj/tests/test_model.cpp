#include <cmath>
#include <string>
#include <vector>

#include "disen/gradcheck.hpp"
#include "disen/model.hpp"
#include "doctest.h"

using disen::Batch;
using disen::ModelConfig;
using disen::ModelParams;
using disen::Rng;
using disen::Shape;
using disen::Tensor;
using disen::Value;

namespace {

Tensor<double> rand_t(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = lo + (hi - lo) * rng.uniform();
    return t;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> trow(const Tensor<double>& m, std::size_t i) {
    std::vector<double> r(m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] = m.at(i, j);
    return r;
}

// W x for a rank-2 W and matching vector.
std::vector<double> mv(const Tensor<double>& w, const std::vector<double>& x) {
    REQUIRE(w.cols() == x.size());
    std::vector<double> y(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) y[i] += w.at(i, j) * x[j];
    return y;
}

// W^T x.
std::vector<double> mtv(const Tensor<double>& w, const std::vector<double>& x) {
    REQUIRE(w.rows() == x.size());
    std::vector<double> y(w.cols(), 0.0);
    for (std::size_t j = 0; j < w.cols(); ++j)
        for (std::size_t i = 0; i < w.rows(); ++i) y[j] += w.at(i, j) * x[i];
    return y;
}

double dotv(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Straight-line evaluation of the chunk transform for one embedding row.
std::vector<double> oracle_chunk(const std::vector<double>& e, const Tensor<double>& w,
                                 const Tensor<double>& b) {
    auto v = mtv(w, e);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = sig(v[i]) + b[i];
    double norm = std::sqrt(dotv(v, v));
    for (auto& x : v) x /= norm + 1e-12;
    return v;
}

// Brute-force distance correlation: materialize distance matrices and their
// double-centered forms, no epsilon plumbing.
double oracle_dcor(const Tensor<double>& x, const Tensor<double>& y) {
    std::size_t n = x.rows();
    auto dists = [n](const Tensor<double>& m) {
        Tensor<double> d(Shape{n, n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0;
                for (std::size_t c = 0; c < m.cols(); ++c) {
                    double diff = m.at(i, c) - m.at(j, c);
                    s += diff * diff;
                }
                d.at(i, j) = std::sqrt(s);
            }
        return d;
    };
    auto center = [n](const Tensor<double>& a) {
        std::vector<double> rm(n, 0), cm(n, 0);
        double gm = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                rm[i] += a.at(i, j);
                cm[j] += a.at(i, j);
                gm += a.at(i, j);
            }
        Tensor<double> out(Shape{n, n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out.at(i, j) = a.at(i, j) - rm[i] / n - cm[j] / n + gm / (n * n);
        return out;
    };
    auto A = center(dists(x)), B = center(dists(y));
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < n * n; ++i) {
        ab += A.data[i] * B.data[i];
        aa += A.data[i] * A.data[i];
        bb += B.data[i] * B.data[i];
    }
    double n2 = double(n * n);
    if (aa / n2 < 1e-12 || bb / n2 < 1e-12) return 0.0;
    return std::sqrt(std::max(ab / n2, 0.0)) / std::sqrt(std::sqrt(aa / n2) * std::sqrt(bb / n2));
}

ModelConfig micro_config(std::size_t n_items, std::size_t d, std::size_t K) {
    ModelConfig cfg;
    cfg.n_items = n_items;
    cfg.d = d;
    cfg.K = K;
    cfg.T = 1;
    cfg.L = 1;
    cfg.lambda = 2.0;
    cfg.dropout = 0.0;
    return cfg;
}

Batch make_batch(const std::vector<std::vector<std::size_t>>& seqs,
                 const std::vector<std::size_t>& labels, std::size_t pad) {
    Batch b;
    b.pad_index = pad;
    b.labels = labels;
    for (const auto& s : seqs) b.max_len = std::max(b.max_len, s.size());
    for (const auto& s : seqs) {
        b.lengths.push_back(s.size());
        for (std::size_t j = 0; j < b.max_len; ++j) {
            b.seqs.push_back(j < s.size() ? s[j] : pad);
            b.mask.push_back(j < s.size() ? 1 : 0);
        }
    }
    return b;
}

void zero_param(ModelParams<double>& p, const std::string& name) {
    p.store.get(name).val_mut().fill(0.0);
}

}  // namespace

TEST_CASE("model: config validation") {
    ModelConfig cfg = micro_config(10, 8, 2);
    CHECK_NOTHROW(cfg.validate());

    auto broken = cfg;
    broken.n_items = 0;
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
    broken = cfg;
    broken.K = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
    broken = cfg;
    broken.T = 0;
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
    broken = cfg;
    broken.L = 0;
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
    broken = cfg;
    broken.lambda = -0.5;
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
    broken = cfg;
    broken.dropout = 1.0;
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
}

TEST_CASE("model: parameter registry and shapes") {
    ModelConfig cfg = micro_config(12, 80, 5);
    Rng rng(3);
    auto p = disen::init_params<double>(cfg, rng);

    CHECK(p.store.get("embed.E").shape() == Shape{12, 80});
    CHECK(p.store.get("chunk.W.0").shape() == Shape{80, 16});
    CHECK(p.store.get("chunk.b.4").shape() == Shape{16});
    CHECK(p.store.get("ggnn.H_in").shape() == Shape{16, 16});
    CHECK(p.store.get("ggnn.W_z").shape() == Shape{16, 32});
    CHECK(p.store.get("ggnn.U_o").shape() == Shape{16, 16});
    CHECK(p.store.get("res.W_q").shape() == Shape{80, 80});
    CHECK(p.store.get("res.w_f").shape() == Shape{80});
    CHECK(p.store.get("attn.W_1").shape() == Shape{16, 16});
    CHECK(p.store.get("attn.q").shape() == Shape{16});
    CHECK(p.store.get("fuse.W_3").shape() == Shape{16, 32});

    // Shared mode registers one GGNN/attention set; per-factor mode registers K.
    CHECK(p.store.find("ggnn.H_in.0") == nullptr);
    auto cfg2 = cfg;
    cfg2.share_ggnn_across_factors = false;
    cfg2.share_attention_across_factors = false;
    Rng rng2(3);
    auto p2 = disen::init_params<double>(cfg2, rng2);
    CHECK(p2.store.find("ggnn.H_in") == nullptr);
    CHECK(p2.store.get("ggnn.H_in.4").shape() == Shape{16, 16});
    CHECK(p2.store.get("attn.q.2").shape() == Shape{16});
    CHECK(p2.store.size() == p.store.size() + 4 * 10 + 4 * 4);

    // Every tensor starts finite and nontrivial.
    for (auto& [name, v] : p.store) {
        double mx = 0;
        for (double x : v.val().data) {
            CHECK(std::isfinite(x));
            mx = std::max(mx, std::fabs(x));
        }
        INFO("param " << name);
        CHECK(mx > 0);
    }
}

TEST_CASE("model: chunk embeddings zero-weight closed form") {
    ModelConfig cfg = micro_config(3, 4, 2);
    Rng rng(11);
    auto p = disen::init_params<double>(cfg, rng);
    for (std::size_t k = 0; k < 2; ++k) {
        zero_param(p, "chunk.W." + std::to_string(k));
        zero_param(p, "chunk.b." + std::to_string(k));
    }
    auto e = Value<double>::constant(rand_t({2, 4}, 5));
    auto chunks = chunk_embeddings(p, e);
    REQUIRE(chunks.size() == 2);
    for (const auto& c : chunks) {
        REQUIRE(c.shape() == Shape{2, 2});
        for (double v : c.val().data) CHECK(v == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
    }
}

TEST_CASE("model: chunk embeddings formula oracle") {
    ModelConfig cfg = micro_config(6, 80, 5);
    Rng rng(17);
    auto p = disen::init_params<double>(cfg, rng);
    auto e = Value<double>::constant(rand_t({3, 80}, 23));
    auto chunks = chunk_embeddings(p, e);
    REQUIRE(chunks.size() == 5);
    for (std::size_t k = 0; k < 5; ++k) {
        REQUIRE(chunks[k].shape() == Shape{3, 16});
        const auto& w = p.store.get("chunk.W." + std::to_string(k)).val();
        const auto& b = p.store.get("chunk.b." + std::to_string(k)).val();
        for (std::size_t i = 0; i < 3; ++i) {
            auto want = oracle_chunk(trow(e.val(), i), w, b);
            for (std::size_t j = 0; j < 16; ++j)
                CHECK(chunks[k].val().at(i, j) == doctest::Approx(want[j]).epsilon(1e-10));
        }
    }

    // A bias that exactly cancels sigmoid(0) drives the pre-normalization
    // vector to zero; the epsilon guard keeps the output finite (and zero).
    ModelConfig tiny = micro_config(3, 4, 2);
    Rng rng2(1);
    auto pt = disen::init_params<double>(tiny, rng2);
    zero_param(pt, "chunk.W.0");
    pt.store.get("chunk.b.0").val_mut().fill(-0.5);
    auto z = chunk_embeddings(pt, Value<double>::constant(rand_t({1, 4}, 2)));
    for (double v : z[0].val().data) {
        CHECK(std::isfinite(v));
        CHECK(v == 0.0);
    }
}

TEST_CASE("model: ggnn zero weights halve the state") {
    ModelConfig cfg = micro_config(5, 8, 2);
    Rng rng(29);
    auto p = disen::init_params<double>(cfg, rng);
    for (const char* n : {"H_in", "H_out", "b_in", "b_out", "W_z", "U_z", "W_r", "U_r", "W_o",
                          "U_o"})
        zero_param(p, std::string("ggnn.") + n);

    auto g = disen::build_graph({0, 1});
    auto mats = disen::build_uniform_matrices<double>(g, 2);
    std::vector<Value<double>> chunks = {Value<double>::constant(rand_t({2, 4}, 31)),
                                         Value<double>::constant(rand_t({2, 4}, 37))};
    auto next = ggnn_step(p, chunks, mats);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < chunks[k].val().numel(); ++i)
            CHECK(next[k].val().data[i] == doctest::Approx(0.5 * chunks[k].val().data[i]).epsilon(1e-14));

    // A graph with no edges at all (single node) halves the same way, and the
    // result only depends on that node's own state.
    auto g1 = disen::build_graph({4});
    auto m1 = disen::build_uniform_matrices<double>(g1, 2);
    std::vector<Value<double>> single = {Value<double>::constant(rand_t({1, 4}, 41)),
                                         Value<double>::constant(rand_t({1, 4}, 43))};
    auto halved = ggnn_step(p, single, m1);
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(halved[k].val().data[i] ==
                  doctest::Approx(0.5 * single[k].val().data[i]).epsilon(1e-14));
}

TEST_CASE("model: ggnn formula oracle") {
    ModelConfig cfg = micro_config(5, 8, 2);
    std::size_t dk = cfg.dk();
    Rng rng(47);
    auto p = disen::init_params<double>(cfg, rng);

    auto g = disen::build_graph({0, 1, 2, 1});
    REQUIRE(g.size() == 3);
    std::vector<Value<double>> chunks = {
        Value<double>::constant(rand_t({3, dk}, 53, 0.1, 1.0)),
        Value<double>::constant(rand_t({3, dk}, 59, 0.1, 1.0))};
    auto mats = disen::build_similarity_matrices(g, chunks);
    auto next = ggnn_step(p, chunks, mats);

    for (std::size_t k = 0; k < 2; ++k) {
        const auto& C = chunks[k].val();
        const auto& Ain = mats.a_in[k].val();
        const auto& Aout = mats.a_out[k].val();
        auto H_in = p.ggnn("H_in", k).val(), H_out = p.ggnn("H_out", k).val();
        auto b_in = p.ggnn("b_in", k).val(), b_out = p.ggnn("b_out", k).val();
        auto W_z = p.ggnn("W_z", k).val(), U_z = p.ggnn("U_z", k).val();
        auto W_r = p.ggnn("W_r", k).val(), U_r = p.ggnn("U_r", k).val();
        auto W_o = p.ggnn("W_o", k).val(), U_o = p.ggnn("U_o", k).val();

        for (std::size_t i = 0; i < 3; ++i) {
            std::vector<double> agg_in(dk, 0), agg_out(dk, 0);
            for (std::size_t j = 0; j < 3; ++j)
                for (std::size_t c = 0; c < dk; ++c) {
                    agg_in[c] += Ain.at(i, j) * C.at(j, c);
                    agg_out[c] += Aout.at(i, j) * C.at(j, c);
                }
            auto a_in = mv(H_in, agg_in);
            auto a_out = mv(H_out, agg_out);
            std::vector<double> a;
            for (std::size_t c = 0; c < dk; ++c) a.push_back(a_in[c] + b_in[c]);
            for (std::size_t c = 0; c < dk; ++c) a.push_back(a_out[c] + b_out[c]);

            auto ci = trow(C, i);
            auto wza = mv(W_z, a), uzc = mv(U_z, ci);
            auto wra = mv(W_r, a), urc = mv(U_r, ci);
            auto woa = mv(W_o, a);
            for (std::size_t c = 0; c < dk; ++c) {
                double z = sig(wza[c] + uzc[c]);
                std::vector<double> rc(dk);
                for (std::size_t c2 = 0; c2 < dk; ++c2)
                    rc[c2] = sig(wra[c2] + urc[c2]) * ci[c2];
                double cand = std::tanh(woa[c] + mv(U_o, rc)[c]);
                double want = (1.0 - z) * ci[c] + z * cand;
                CHECK(next[k].val().at(i, c) == doctest::Approx(want).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("model: ggnn non-finite abort names factor and node") {
    ModelConfig cfg = micro_config(5, 8, 2);
    Rng rng(61);
    auto p = disen::init_params<double>(cfg, rng);
    auto g = disen::build_graph({0, 1});
    auto mats = disen::build_uniform_matrices<double>(g, 2);
    auto bad = rand_t({2, 4}, 67);
    bad.at(1, 0) = std::numeric_limits<double>::infinity();
    std::vector<Value<double>> chunks = {Value<double>::constant(rand_t({2, 4}, 71)),
                                         Value<double>::constant(bad)};
    try {
        ggnn_step(p, chunks, mats);
        FAIL("expected non-finite state to throw");
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("non-finite") != std::string::npos);
        CHECK(msg.find("factor 1") != std::string::npos);
        CHECK(msg.find("node") != std::string::npos);
    }
}

TEST_CASE("model: residual fuse closed forms") {
    ModelConfig cfg = micro_config(5, 8, 2);
    Rng rng(73);
    auto p = disen::init_params<double>(cfg, rng);

    auto x = Value<double>::constant(rand_t({3, 8}, 79));
    auto fused_same = residual_fuse(p, x, x);
    for (std::size_t i = 0; i < x.val().numel(); ++i)
        CHECK(fused_same.val().data[i] == doctest::Approx(x.val().data[i]).epsilon(1e-12));

    zero_param(p, "res.w_f");
    auto y = Value<double>::constant(rand_t({3, 8}, 83));
    auto fused_mean = residual_fuse(p, x, y);
    for (std::size_t i = 0; i < x.val().numel(); ++i)
        CHECK(fused_mean.val().data[i] ==
              doctest::Approx(0.5 * (x.val().data[i] + y.val().data[i])).epsilon(1e-12));
}

TEST_CASE("model: residual fuse formula oracle and segment property") {
    ModelConfig cfg = micro_config(5, 8, 2);
    Rng rng(89);
    auto p = disen::init_params<double>(cfg, rng);
    auto ep = rand_t({4, 8}, 97);
    auto eo = rand_t({4, 8}, 101);
    auto fused = residual_fuse(p, Value<double>::constant(ep), Value<double>::constant(eo));

    const auto& wq = p.store.get("res.W_q").val();
    const auto& wp = p.store.get("res.W_p").val();
    const auto& wf = p.store.get("res.w_f").val();
    for (std::size_t i = 0; i < 4; ++i) {
        auto pre_q = mv(wq, trow(ep, i));
        auto pre_p = mv(wp, trow(eo, i));
        double raw = 0;
        for (std::size_t j = 0; j < 8; ++j) raw += wf[j] * sig(pre_q[j] + pre_p[j]);
        double alpha = sig(raw);
        for (std::size_t j = 0; j < 8; ++j) {
            double want = alpha * ep.at(i, j) + (1 - alpha) * eo.at(i, j);
            CHECK(fused.val().at(i, j) == doctest::Approx(want).epsilon(1e-10));
            double lo = std::min(ep.at(i, j), eo.at(i, j));
            double hi = std::max(ep.at(i, j), eo.at(i, j));
            CHECK(fused.val().at(i, j) >= lo - 1e-12);
            CHECK(fused.val().at(i, j) <= hi + 1e-12);
        }
    }
}

TEST_CASE("model: distance correlation basics") {
    auto x = Value<double>::constant(rand_t({4, 3}, 103));
    CHECK(disen::distance_correlation(x, x).scalar() == doctest::Approx(1.0).epsilon(1e-9));

    Tensor<double> same(Shape{4, 3});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) same.at(i, j) = double(j) * 0.25 + 0.5;
    auto deg = Value<double>::constant(same);
    CHECK(disen::distance_correlation(deg, x).scalar() == 0.0);
    CHECK(disen::distance_correlation(x, deg).scalar() == 0.0);

    auto one_row = Value<double>::constant(rand_t({1, 3}, 107));
    CHECK(disen::distance_correlation(one_row, one_row).scalar() == 0.0);
}

TEST_CASE("model: distance correlation oracle and invariances") {
    auto xt = rand_t({4, 2}, 109);
    auto yt = rand_t({4, 2}, 113);
    auto x = Value<double>::constant(xt);
    auto y = Value<double>::constant(yt);

    double got = disen::distance_correlation(x, y).scalar();
    CHECK(got == doctest::Approx(oracle_dcor(xt, yt)).epsilon(1e-6));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);

    // Symmetric in its arguments.
    CHECK(disen::distance_correlation(y, x).scalar() == doctest::Approx(got).epsilon(1e-12));

    // Translating every row of one argument leaves distances untouched.
    auto shifted = xt;
    for (std::size_t i = 0; i < 4; ++i) {
        shifted.at(i, 0) += 3.5;
        shifted.at(i, 1) -= 1.25;
    }
    CHECK(disen::distance_correlation(Value<double>::constant(shifted), y).scalar() ==
          doctest::Approx(got).epsilon(1e-9));

    // Rotating rows (orthogonal transform) also preserves distances.
    double c = std::cos(0.7), s = std::sin(0.7);
    auto rotated = xt;
    for (std::size_t i = 0; i < 4; ++i) {
        rotated.at(i, 0) = c * xt.at(i, 0) - s * xt.at(i, 1);
        rotated.at(i, 1) = s * xt.at(i, 0) + c * xt.at(i, 1);
    }
    CHECK(disen::distance_correlation(Value<double>::constant(rotated), y).scalar() ==
          doctest::Approx(got).epsilon(1e-9));

    // Gradients through the full composition agree with finite differences.
    disen::ParamStore<double> ps;
    auto& px = ps.add("x", rand_t({4, 2}, 127));
    auto& py = ps.add("y", rand_t({4, 2}, 131));
    auto report = disen::grad_check(
        ps, [&] { return disen::distance_correlation(px, py); }, 1e-5, 1e-4);
    INFO("worst " << report.worst.param << "[" << report.worst.index << "] rel "
         << report.worst.rel_err);
    CHECK(report.ok);
}

TEST_CASE("model: disentanglement loss pair structure") {
    std::vector<Value<double>> one = {Value<double>::constant(rand_t({3, 2}, 137))};
    CHECK(disen::disentanglement_loss(one).scalar() == 0.0);

    std::vector<Value<double>> three = {Value<double>::constant(rand_t({4, 2}, 139)),
                                        Value<double>::constant(rand_t({4, 2}, 149)),
                                        Value<double>::constant(rand_t({4, 2}, 151))};
    double want = disen::distance_correlation(three[0], three[1]).scalar() +
                  disen::distance_correlation(three[0], three[2]).scalar() +
                  disen::distance_correlation(three[1], three[2]).scalar();
    CHECK(disen::disentanglement_loss(three).scalar() == doctest::Approx(want).epsilon(1e-12));

    auto shared = rand_t({4, 2}, 157);
    std::vector<Value<double>> twins = {Value<double>::constant(shared),
                                        Value<double>::constant(shared)};
    CHECK(disen::disentanglement_loss(twins).scalar() == doctest::Approx(1.0).epsilon(1e-9));

    // A single node gives degenerate (n < 2) correlations: loss 0.
    std::vector<Value<double>> tiny = {Value<double>::constant(rand_t({1, 2}, 163)),
                                       Value<double>::constant(rand_t({1, 2}, 167))};
    CHECK(disen::disentanglement_loss(tiny).scalar() == 0.0);
}

TEST_CASE("model: session embedding closed forms") {
    ModelConfig cfg = micro_config(5, 8, 2);
    std::size_t dk = cfg.dk();
    Rng rng(173);
    auto p = disen::init_params<double>(cfg, rng);

    SUBCASE("zero query vector kills the global term") {
        zero_param(p, "attn.q");
        auto embs = Value<double>::constant(rand_t({3, 8}, 179));
        auto se = session_embed(p, embs, {1, 1, 1});
        for (double a : se.alpha.val().data) CHECK(a == 0.0);
        for (double v : se.s_g.val().data) CHECK(v == 0.0);
        const auto& w3 = p.store.get("fuse.W_3").val();
        for (std::size_t k = 0; k < 2; ++k) {
            std::vector<double> cat(2 * dk, 0.0);
            for (std::size_t j = 0; j < dk; ++j) cat[j] = embs.val().at(2, k * dk + j);
            auto want = mv(w3, cat);
            for (std::size_t j = 0; j < dk; ++j)
                CHECK(se.s_h.val()[k * dk + j] == doctest::Approx(want[j]).epsilon(1e-12));
        }
    }

    SUBCASE("single item session") {
        auto embs = Value<double>::constant(rand_t({1, 8}, 181));
        auto se = session_embed(p, embs, {1});
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(se.s_l.val()[j] == embs.val().at(0, j));
        REQUIRE(se.alpha.shape() == Shape{1, 2});
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t j = 0; j < dk; ++j)
                CHECK(se.s_g.val()[k * dk + j] ==
                      doctest::Approx(se.alpha.val().at(0, k) * embs.val().at(0, k * dk + j))
                          .epsilon(1e-12));
    }

    SUBCASE("mask selects the real rows") {
        auto full = rand_t({5, 8}, 191);
        Tensor<double> head(Shape{3, 8});
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 8; ++j) head.at(i, j) = full.at(i, j);
        auto masked = session_embed(p, Value<double>::constant(full), {1, 1, 1, 0, 0});
        auto dense = session_embed(p, Value<double>::constant(head), {1, 1, 1});
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(masked.s_h.val()[j] == dense.s_h.val()[j]);
            CHECK(masked.s_g.val()[j] == dense.s_g.val()[j]);
            CHECK(masked.s_l.val()[j] == dense.s_l.val()[j]);
        }
        // s_l picks the last unmasked row, not the last row.
        for (std::size_t j = 0; j < 8; ++j) CHECK(masked.s_l.val()[j] == full.at(2, j));
    }

    SUBCASE("all-masked input is rejected") {
        auto embs = Value<double>::constant(rand_t({2, 8}, 193));
        CHECK_THROWS_AS(session_embed(p, embs, {0, 0}), std::invalid_argument);
        CHECK_THROWS_AS(session_embed(p, embs, {1}), std::invalid_argument);
    }
}

TEST_CASE("model: session embedding formula oracle") {
    ModelConfig cfg = micro_config(5, 8, 2);
    std::size_t dk = cfg.dk();
    Rng rng(197);
    auto p = disen::init_params<double>(cfg, rng);
    auto embs = rand_t({3, 8}, 199);
    auto se = session_embed(p, Value<double>::constant(embs), {1, 1, 1});

    const auto& w3 = p.store.get("fuse.W_3").val();
    for (std::size_t k = 0; k < 2; ++k) {
        const auto& w1 = p.attn("W_1", k).val();
        const auto& w2 = p.attn("W_2", k).val();
        const auto& b = p.attn("b", k).val();
        const auto& q = p.attn("q", k).val();

        std::vector<double> c_last(dk);
        for (std::size_t j = 0; j < dk; ++j) c_last[j] = embs.at(2, k * dk + j);
        auto w1c = mv(w1, c_last);

        std::vector<double> s_g(dk, 0.0);
        for (std::size_t i = 0; i < 3; ++i) {
            std::vector<double> ci(dk);
            for (std::size_t j = 0; j < dk; ++j) ci[j] = embs.at(i, k * dk + j);
            auto w2c = mv(w2, ci);
            double alpha = 0;
            for (std::size_t j = 0; j < dk; ++j) alpha += q[j] * sig(w1c[j] + w2c[j] + b[j]);
            CHECK(se.alpha.val().at(i, k) == doctest::Approx(alpha).epsilon(1e-10));
            for (std::size_t j = 0; j < dk; ++j) s_g[j] += alpha * ci[j];
        }
        std::vector<double> cat(2 * dk);
        for (std::size_t j = 0; j < dk; ++j) cat[j] = c_last[j];
        for (std::size_t j = 0; j < dk; ++j) cat[dk + j] = s_g[j];
        auto s_h = mv(w3, cat);
        for (std::size_t j = 0; j < dk; ++j) {
            CHECK(se.s_g.val()[k * dk + j] == doctest::Approx(s_g[j]).epsilon(1e-10));
            CHECK(se.s_h.val()[k * dk + j] == doctest::Approx(s_h[j]).epsilon(1e-10));
        }
    }
}

TEST_CASE("model: scoring identity and argmax") {
    std::size_t N = 7, d = 12, K = 3, dk = d / K;
    auto cand = rand_t({N, d}, 211);
    auto sh = rand_t({d}, 223);
    auto yhat = disen::score_items(Value<double>::constant(sh), Value<double>::constant(cand));

    double total = 0;
    for (double v : yhat.val().data) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

    // Factor-wise dot sums equal the full-vector dot, and softmax of those
    // logits reproduces the probabilities.
    std::vector<double> logits(N, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < dk; ++j)
                logits[i] += sh[k * dk + j] * cand.at(i, k * dk + j);
    std::size_t arg_brute = 0;
    for (std::size_t i = 0; i < N; ++i) {
        double full = dotv(sh.data, trow(cand, i));
        CHECK(logits[i] == doctest::Approx(full).epsilon(1e-9));
        if (logits[i] > logits[arg_brute]) arg_brute = i;
    }
    std::size_t arg_model = 0;
    for (std::size_t i = 0; i < N; ++i)
        if (yhat.val()[i] > yhat.val()[arg_model]) arg_model = i;
    CHECK(arg_model == arg_brute);

    // Shifting every logit by a constant changes nothing after softmax.
    auto shifted_logits = Value<double>::constant([&] {
        Tensor<double> t(Shape{N});
        for (std::size_t i = 0; i < N; ++i) t[i] = logits[i] + 37.5;
        return t;
    }());
    auto shifted = disen::softmax(shifted_logits);
    for (std::size_t i = 0; i < N; ++i)
        CHECK(shifted.val()[i] == doctest::Approx(yhat.val()[i]).epsilon(1e-9));
}

TEST_CASE("model: prediction loss values") {
    Tensor<double> half(Shape{2});
    half[0] = half[1] = 0.5;
    auto l = disen::prediction_loss(Value<double>::constant(half), 0);
    CHECK(l.scalar() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

    Tensor<double> sharp(Shape{4});
    sharp[0] = 1e-9;
    sharp[1] = 1.0 - 3e-9;
    sharp[2] = 1e-9;
    sharp[3] = 1e-9;
    CHECK(disen::prediction_loss(Value<double>::constant(sharp), 1).scalar() < 1e-6);

    auto probs_t = rand_t({5}, 227, 0.05, 0.3);
    double norm = 0;
    for (double v : probs_t.data) norm += v;
    for (auto& v : probs_t.data) v /= norm;
    std::size_t target = 3;
    double want = -std::log(probs_t[target]);
    for (std::size_t i = 0; i < 5; ++i)
        if (i != target) want -= std::log(1.0 - probs_t[i]);
    CHECK(disen::prediction_loss(Value<double>::constant(probs_t), target).scalar() ==
          doctest::Approx(want).epsilon(1e-12));

    CHECK_THROWS_AS(disen::prediction_loss(Value<double>::constant(probs_t), 5),
                    std::invalid_argument);
}

TEST_CASE("model: total loss arithmetic") {
    auto lc = Value<double>::constant(Tensor<double>::scalar(1.0));
    auto ld = Value<double>::constant(Tensor<double>::scalar(0.2));
    CHECK(disen::total_loss(lc, ld, 0.0).scalar() == 1.0);
    CHECK(disen::total_loss(lc, ld, 5.0).scalar() == doctest::Approx(2.0).epsilon(1e-12));

    auto lc2 = Value<double>::constant(Tensor<double>::scalar(0.734));
    auto ld2 = Value<double>::constant(Tensor<double>::scalar(0.0491));
    CHECK(disen::total_loss(lc2, ld2, 15.0).scalar() ==
          doctest::Approx(0.734 + 15.0 * 0.0491).epsilon(1e-12));
}

TEST_CASE("model: forward determinism and dropout") {
    ModelConfig cfg = micro_config(7, 8, 2);
    cfg.L = 2;
    cfg.dropout = 0.5;
    Rng rng(229);
    auto p = disen::init_params<double>(cfg, rng);
    auto batch = make_batch({{0, 1, 2, 1}, {3, 4}}, {3, 0}, 7);

    auto a = disen::forward(p, batch, false);
    auto b = disen::forward(p, batch, false);
    double diff = 0;
    for (std::size_t i = 0; i < a.yhat.val().numel(); ++i)
        diff += std::fabs(a.yhat.val().data[i] - b.yhat.val().data[i]);
    CHECK(diff == 0.0);
    CHECK(a.total.scalar() == b.total.scalar());

    // Training mode consumes the dropout stream: same seed, same run.
    Rng d1(5), d2(5), d3(99);
    auto t1 = disen::forward(p, batch, true, &d1);
    auto t2 = disen::forward(p, batch, true, &d2);
    CHECK(t1.total.scalar() == t2.total.scalar());
    auto t3 = disen::forward(p, batch, true, &d3);
    CHECK(t1.total.scalar() != t3.total.scalar());

    // Dropout masks change the loss relative to eval mode.
    CHECK(t1.total.scalar() != a.total.scalar());

    // Training without an rng is an error while dropout is active.
    CHECK_THROWS_AS(disen::forward(p, batch, true), std::invalid_argument);

    // Empty batches are rejected.
    Batch empty;
    CHECK_THROWS_AS(disen::forward(p, empty, false), std::invalid_argument);
}

TEST_CASE("model: forward pad invariance and error labeling") {
    ModelConfig cfg = micro_config(7, 8, 2);
    Rng rng(233);
    auto p = disen::init_params<double>(cfg, rng);

    auto batch = make_batch({{0, 1, 2}, {3}}, {4, 5}, 7);
    auto garbled = batch;
    for (std::size_t i = 0; i < garbled.mask.size(); ++i)
        if (!garbled.mask[i]) garbled.seqs[i] = 424242;  // junk in every pad slot

    auto a = disen::forward(p, batch, false);
    auto b = disen::forward(p, garbled, false);
    double diff = 0;
    for (std::size_t i = 0; i < a.yhat.val().numel(); ++i)
        diff += std::fabs(a.yhat.val().data[i] - b.yhat.val().data[i]);
    CHECK(diff == 0.0);
    CHECK(a.total.scalar() == b.total.scalar());

    // Out-of-vocabulary items are reported with their session position.
    auto bad = make_batch({{0, 1}, {0, 99}}, {1, 1}, 7);
    try {
        disen::forward(p, bad, false);
        FAIL("expected out-of-range item to throw");
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("session 1") != std::string::npos);
        CHECK(msg.find("99") != std::string::npos);
    }
}

TEST_CASE("model: forward matches a hand-composed pipeline") {
    // Single factor, uniform neighborhoods, no residual blend: the forward
    // pass must coincide with composing the pieces directly.
    ModelConfig cfg = micro_config(6, 8, 1);
    cfg.use_factor_similarity = false;
    cfg.use_residual_attention = false;
    cfg.lambda = 0.0;
    Rng rng(239);
    auto p = disen::init_params<double>(cfg, rng);

    std::vector<std::size_t> seq = {0, 1, 2, 1};
    auto batch = make_batch({seq}, {3}, 6);
    auto got = disen::forward(p, batch, false);

    auto table = disen::concat_cols(chunk_embeddings(p, p.store.get("embed.E")));
    auto g = disen::build_graph(seq);
    auto init = disen::gather_rows(table, g.nodes);
    auto mats = disen::build_uniform_matrices<double>(g, 1);
    auto stepped = ggnn_step(p, {init}, mats);
    auto item_embs = disen::gather_rows(stepped[0], g.alias);
    auto se = session_embed(p, item_embs, std::vector<char>(seq.size(), 1));
    auto want = disen::score_items(se.s_h, table);

    double diff = 0;
    for (std::size_t i = 0; i < 6; ++i)
        diff += std::fabs(got.yhat.val().at(0, i) - want.val()[i]);
    CHECK(diff == 0.0);
    CHECK(got.loss_dec.scalar() == 0.0);  // K = 1: no factor pairs
}

TEST_CASE("model: no dead parameters") {
    ModelConfig cfg = micro_config(6, 8, 2);
    cfg.T = 1;
    cfg.L = 2;
    cfg.lambda = 1.0;
    Rng rng(241);
    auto p = disen::init_params<double>(cfg, rng);
    auto batch = make_batch({{0, 1, 2, 1}, {3, 4, 3}}, {5, 0}, 6);

    p.store.zero_grad();
    auto out = disen::forward(p, batch, false);
    disen::backward(out.total);

    for (auto& [name, v] : p.store) {
        double mx = 0;
        for (double gg : v.grad().data) mx = std::max(mx, std::fabs(gg));
        INFO("param " << name);
        CHECK(mx > 0.0);
    }
}

TEST_CASE("model: full loss gradient vs finite differences") {
    auto batch = make_batch({{0, 1, 2, 1}, {3, 4}, {5}}, {3, 0, 6}, 7);

    SUBCASE("single layer single step") {
        ModelConfig cfg = micro_config(7, 8, 2);
        Rng rng(251);
        auto p = disen::init_params<double>(cfg, rng);
        auto report = disen::grad_check(
            p.store, [&] { return disen::forward(p, batch, true).total; }, 1e-5, 1e-4, 6);
        INFO("checked " << report.checked << " entries; worst " << report.worst.param << "["
                                << report.worst.index << "] analytic " << report.worst.analytic
                                << " numeric " << report.worst.numeric << " rel "
                                << report.worst.rel_err);
        CHECK(report.ok);
        CHECK(report.checked > 100);
    }

    SUBCASE("two layers, two steps, per-factor parameters") {
        ModelConfig cfg = micro_config(7, 8, 2);
        cfg.T = 2;
        cfg.L = 2;
        cfg.share_ggnn_across_factors = false;
        cfg.share_attention_across_factors = false;
        Rng rng(257);
        auto p = disen::init_params<double>(cfg, rng);
        auto report = disen::grad_check(
            p.store, [&] { return disen::forward(p, batch, true).total; }, 1e-5, 1e-4, 3);
        INFO("checked " << report.checked << " entries; worst " << report.worst.param << "["
                                << report.worst.index << "] analytic " << report.worst.analytic
                                << " numeric " << report.worst.numeric << " rel "
                                << report.worst.rel_err);
        CHECK(report.ok);
    }
}
