#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "disen/data.hpp"
#include "disen/model.hpp"

namespace disen {

struct MetricsReport {
    std::size_t cutoff = 20;
    double precision_at_k = 0.0;  // fraction of sessions with the target in the top k
    double mrr_at_k = 0.0;        // mean reciprocal rank, 0 outside the top k
    std::size_t n_evaluated = 0;
};

/// Rank of `target` under descending score. Ties break by ascending item
/// index, so the rank is 1 + #strictly-greater + #equal-at-lower-index.
inline std::size_t rank_of(const std::vector<double>& scores, std::size_t target) {
    if (target >= scores.size()) throw std::invalid_argument("rank_of: target out of range");
    double st = scores[target];
    std::size_t rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] > st || (scores[i] == st && i < target)) ++rank;
    }
    return rank;
}

namespace detail {

struct MetricAccumulator {
    std::size_t cutoff;
    std::size_t n = 0;
    double hits = 0;
    double rr = 0;

    void add_rank(std::size_t rank) {
        ++n;
        if (rank <= cutoff) {
            hits += 1.0;
            rr += 1.0 / double(rank);
        }
    }
    MetricsReport report() const {
        if (n == 0) throw std::invalid_argument("rank_metrics: empty evaluation set");
        return {cutoff, hits / double(n), rr / double(n), n};
    }
};

}  // namespace detail

inline MetricsReport rank_metrics(const std::vector<std::vector<double>>& scores,
                                  const std::vector<std::size_t>& targets, std::size_t k = 20) {
    if (scores.size() != targets.size())
        throw std::invalid_argument("rank_metrics: score/target count mismatch");
    detail::MetricAccumulator acc{k};
    for (std::size_t s = 0; s < scores.size(); ++s) acc.add_rank(rank_of(scores[s], targets[s]));
    return acc.report();
}

/// A scorer maps a session prefix to one score per vocabulary item.
using Scorer = std::function<std::vector<double>(const std::vector<std::size_t>&)>;

/// Popularity baseline: every session gets the same score vector, the item
/// click counts over the training pairs (sequence positions plus label).
inline Scorer pop_baseline(const std::vector<SeqPair>& train_pairs, std::size_t n_items) {
    std::vector<double> counts(n_items, 0.0);
    for (const auto& p : train_pairs) {
        for (auto it : p.sequence)
            if (it < n_items) counts[it] += 1.0;
        if (p.label < n_items) counts[p.label] += 1.0;
    }
    return [counts](const std::vector<std::size_t>&) { return counts; };
}

/// Item-KNN baseline over binary item/session incidence: candidates score by
/// cosine similarity to the last session item (or the mean over the session's
/// unique items), with self-similarity excluded. `top_n` > 0 keeps only each
/// item's strongest that many neighbors.
inline Scorer itemknn_baseline(const std::vector<SeqPair>& train_pairs, std::size_t n_items,
                               bool mean_over_session = false, std::size_t top_n = 0) {
    std::vector<double> cnt(n_items, 0.0);
    std::vector<std::vector<double>> co(n_items, std::vector<double>(n_items, 0.0));
    for (const auto& p : train_pairs) {
        std::vector<std::size_t> uniq;
        auto take = [&](std::size_t it) {
            if (it < n_items && std::find(uniq.begin(), uniq.end(), it) == uniq.end())
                uniq.push_back(it);
        };
        for (auto it : p.sequence) take(it);
        take(p.label);
        for (auto i : uniq) {
            cnt[i] += 1.0;
            for (auto j : uniq)
                if (j != i) co[i][j] += 1.0;
        }
    }
    std::vector<std::vector<double>> cos(n_items, std::vector<double>(n_items, 0.0));
    for (std::size_t i = 0; i < n_items; ++i)
        for (std::size_t j = 0; j < n_items; ++j)
            if (i != j && cnt[i] > 0 && cnt[j] > 0)
                cos[i][j] = co[i][j] / std::sqrt(cnt[i] * cnt[j]);
    if (top_n > 0 && top_n < n_items) {
        for (auto& sims : cos) {
            auto keep = sims;
            std::nth_element(keep.begin(), keep.begin() + top_n, keep.end(),
                             std::greater<double>());
            double floor_v = keep[top_n];
            std::size_t kept = 0;
            for (auto& v : sims) {
                if (v > floor_v && kept < top_n)
                    ++kept;
                else
                    v = 0.0;
            }
        }
    }
    return [cos, mean_over_session, n_items](const std::vector<std::size_t>& seq) {
        std::vector<double> scores(n_items, 0.0);
        if (seq.empty()) return scores;
        if (!mean_over_session) {
            std::size_t last = seq.back();
            if (last < n_items) scores = cos[last];
            return scores;
        }
        std::vector<std::size_t> uniq;
        for (auto it : seq)
            if (it < n_items && std::find(uniq.begin(), uniq.end(), it) == uniq.end())
                uniq.push_back(it);
        if (uniq.empty()) return scores;
        for (auto i : uniq)
            for (std::size_t j = 0; j < n_items; ++j) scores[j] += cos[i][j];
        for (auto& v : scores) v /= double(uniq.size());
        return scores;
    };
}

inline MetricsReport evaluate_scorer(const Scorer& scorer, const std::vector<SeqPair>& pairs,
                                     std::size_t k = 20) {
    detail::MetricAccumulator acc{k};
    for (const auto& p : pairs) acc.add_rank(rank_of(scorer(p.sequence), p.label));
    return acc.report();
}

/// Model metrics over a pair list: batched eval-mode forward passes, ranks
/// from the predicted distributions.
template <class Real>
MetricsReport evaluate_model(ModelParams<Real>& params, const std::vector<SeqPair>& pairs,
                             std::size_t batch_size, std::size_t k = 20) {
    detail::MetricAccumulator acc{k};
    if (pairs.empty()) return acc.report();  // throws the empty-set error
    Rng unused(0);
    auto batches = make_batches(pairs, batch_size, params.cfg.n_items, unused, false);
    for (const auto& batch : batches) {
        auto out = forward(params, batch, false);
        const auto& yhat = out.yhat.val();
        for (std::size_t s = 0; s < batch.size(); ++s) {
            std::vector<double> scores(yhat.cols());
            for (std::size_t i = 0; i < yhat.cols(); ++i) scores[i] = double(yhat.at(s, i));
            acc.add_rank(rank_of(scores, batch.labels[s]));
        }
    }
    return acc.report();
}

}  // namespace disen
