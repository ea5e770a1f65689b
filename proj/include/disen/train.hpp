#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "disen/adam.hpp"
#include "disen/data.hpp"
#include "disen/eval.hpp"
#include "disen/model.hpp"
#include "disen/rng.hpp"

namespace disen {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 100;
    AdamConfig adam;  // base_lr 0.005, decay 0.1 every 3 epochs, l2 1e-5
    std::size_t patience = 5;
    std::uint64_t seed = 42;
    std::size_t eval_k = 20;
    std::string out_dir;  // empty: keep everything in memory, write nothing

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw std::invalid_argument("train: epochs and batch_size must be positive");
        if (patience < 1) throw std::invalid_argument("train: patience must be at least 1");
        if (adam.base_lr <= 0 || adam.lr_decay <= 0)
            throw std::invalid_argument("train: learning rates must be positive");
        if (adam.weight_decay < 0) throw std::invalid_argument("train: weight decay must be nonnegative");
        if (eval_k < 1) throw std::invalid_argument("train: eval_k must be at least 1");
    }
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based count of completed epochs
    double lr = 0;
    double train_loss = 0;  // mean per-session total loss
    double dec_loss = 0;    // mean per-session independence loss
    double valid_p = 0;
    double valid_mrr = 0;
    double wall_time_s = 0;
};

/// Self-contained model snapshot. Parameters are stored as 32-bit floats,
/// optimizer moments as 64-bit, both row-major little-endian on disk.
struct Checkpoint {
    ModelConfig config;
    std::vector<std::string> vocab;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;  // manifest order
    std::uint64_t adam_steps = 0;
    std::vector<Tensor<double>> adam_m;  // parallel to tensors when adam_steps > 0
    std::vector<Tensor<double>> adam_u;
    std::size_t epoch = 0;       // completed epochs
    std::size_t best_epoch = 0;  // epoch that produced best_mrr, 0 = none
    double best_mrr = -1.0;      // best validation MRR so far, -1 = none
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot the live training state. Pass adam = nullptr for a plain
/// parameter dump (prediction-only checkpoints).
template <class Real>
Checkpoint make_checkpoint(ModelParams<Real>& p, const Adam<Real>* adam,
                           std::vector<std::string> vocab, std::size_t epoch,
                           std::size_t best_epoch, double best_mrr) {
    Checkpoint c;
    c.config = p.cfg;
    c.vocab = std::move(vocab);
    for (auto& [name, v] : p.store) c.tensors.emplace_back(name, v.val().template cast<float>());
    if (adam && adam->step_count() > 0) {
        c.adam_steps = adam->step_count();
        c.adam_m = adam->first_moments();
        c.adam_u = adam->second_moments();
    }
    c.epoch = epoch;
    c.best_epoch = best_epoch;
    c.best_mrr = best_mrr;
    return c;
}

/// Rebuild parameters from a checkpoint, verifying the tensor list against
/// the config's manifest (names, order, shapes).
template <class Real>
ModelParams<Real> params_from_checkpoint(const Checkpoint& c) {
    auto manifest = param_manifest(c.config);
    if (manifest.size() != c.tensors.size())
        throw std::runtime_error("checkpoint: expected " + std::to_string(manifest.size()) +
                                 " tensors, found " + std::to_string(c.tensors.size()));
    ModelParams<Real> p;
    p.cfg = c.config;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const auto& [name, shape] = manifest[i];
        const auto& [got_name, tensor] = c.tensors[i];
        if (got_name != name)
            throw std::runtime_error("checkpoint: tensor " + std::to_string(i) + " is '" +
                                     got_name + "', expected '" + name + "'");
        if (tensor.shape != shape)
            throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                                     shape_str(tensor.shape) + ", expected " + shape_str(shape));
        p.store.add(name, tensor.template cast<Real>());
    }
    return p;
}

template <class Real>
void restore_adam(const Checkpoint& c, Adam<Real>& adam) {
    if (c.adam_steps == 0) return;
    adam.set_state(c.adam_m, c.adam_u, c.adam_steps);
}

template <class Real>
struct TrainResult {
    ModelParams<Real> params;  // state after the last completed epoch
    Checkpoint best;           // snapshot at the best validation epoch
    Checkpoint last;           // resume point
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    double best_mrr = 0;
};

namespace detail {

std::string epoch_stats_json(const EpochStats& s, std::size_t k);

}  // namespace detail

/// The training loop: seeded shuffling, forward/backward/Adam per batch,
/// per-epoch validation, best-MRR model selection with early stopping.
/// Resuming from a checkpoint replays exactly the epochs an uninterrupted
/// run would have executed, with identical per-epoch substreams.
template <class Real = float>
TrainResult<Real> train(ModelConfig mcfg, const TrainConfig& tcfg, const PreparedDataset& data,
                        const Checkpoint* resume = nullptr) {
    tcfg.validate();
    if (mcfg.n_items == 0) mcfg.n_items = data.n_items();
    if (mcfg.n_items != data.n_items())
        throw std::invalid_argument("train: config expects " + std::to_string(mcfg.n_items) +
                                    " items but the dataset has " +
                                    std::to_string(data.n_items()));
    mcfg.validate();
    if (data.train_pairs.empty()) throw std::invalid_argument("train: no training pairs");

    // Claim the artifact directory before any work so an unwritable path
    // fails fast instead of discarding a finished run.
    std::ofstream log_file;
    bool writing = !tcfg.out_dir.empty();
    if (writing) {
        std::error_code ec;
        std::filesystem::create_directories(tcfg.out_dir, ec);
        log_file.open(tcfg.out_dir + "/epochs.jsonl",
                      resume ? std::ios::app : std::ios::trunc);
        if (ec || !log_file)
            throw std::runtime_error("train: cannot write to output directory '" + tcfg.out_dir +
                                     "'");
    }

    TrainResult<Real> result;
    std::size_t start_epoch = 0;
    Adam<Real> adam(tcfg.adam);
    if (resume) {
        if (param_manifest(resume->config) != param_manifest(mcfg))
            throw std::invalid_argument("train: resume checkpoint was built for a different model configuration");
        result.params = params_from_checkpoint<Real>(*resume);
        restore_adam(*resume, adam);
        start_epoch = resume->epoch;
        result.best_epoch = resume->best_epoch;
        result.best_mrr = resume->best_mrr;
        result.best = *resume;
    } else {
        auto init_rng = substream(tcfg.seed, "init");
        result.params = init_params<Real>(mcfg, init_rng);
        result.best_mrr = -1.0;
    }
    if (start_epoch >= tcfg.epochs)
        throw std::invalid_argument("train: checkpoint already has " +
                                    std::to_string(start_epoch) + " epochs, limit is " +
                                    std::to_string(tcfg.epochs));

    const auto& valid_for_selection =
        data.valid_pairs.empty() ? data.train_pairs : data.valid_pairs;

    for (std::size_t e = start_epoch; e < tcfg.epochs; ++e) {
        auto t0 = std::chrono::steady_clock::now();
        auto shuffle_rng = substream(tcfg.seed, "shuffle", e);
        auto dropout_rng = substream(tcfg.seed, "dropout", e);
        auto batches = make_batches(data.train_pairs, tcfg.batch_size, data.pad_index(),
                                    shuffle_rng, true);

        double loss_sum = 0, dec_sum = 0;
        std::size_t n_sessions = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            try {
                result.params.store.zero_grad();
                auto out = forward(result.params, batches[b], true, &dropout_rng);
                double total = double(out.total.scalar());
                if (!std::isfinite(total)) throw std::runtime_error("loss is not finite");
                backward(out.total);
                adam.step(result.params.store, e);
                loss_sum += total * double(batches[b].size());
                dec_sum += double(out.loss_dec.scalar()) * double(batches[b].size());
                n_sessions += batches[b].size();
            } catch (const std::exception& ex) {
                throw std::runtime_error("train: epoch " + std::to_string(e + 1) + ", batch " +
                                         std::to_string(b) + ": " + ex.what());
            }
        }

        auto metrics =
            evaluate_model(result.params, valid_for_selection, tcfg.batch_size, tcfg.eval_k);

        EpochStats stats;
        stats.epoch = e + 1;
        stats.lr = lr_at(tcfg.adam, e);
        stats.train_loss = loss_sum / double(n_sessions);
        stats.dec_loss = dec_sum / double(n_sessions);
        stats.valid_p = metrics.precision_at_k;
        stats.valid_mrr = metrics.mrr_at_k;
        stats.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(stats);

        // Strictly-better only: ties keep the earlier epoch's model.
        if (metrics.mrr_at_k > result.best_mrr) {
            result.best_mrr = metrics.mrr_at_k;
            result.best_epoch = e + 1;
            result.best = make_checkpoint(result.params, &adam, data.vocab, e + 1,
                                          result.best_epoch, result.best_mrr);
            if (writing) save_checkpoint(result.best, tcfg.out_dir + "/best.ckpt");
        }
        result.last = make_checkpoint(result.params, &adam, data.vocab, e + 1,
                                      result.best_epoch, result.best_mrr);
        if (writing) {
            save_checkpoint(result.last, tcfg.out_dir + "/last.ckpt");
            log_file << detail::epoch_stats_json(stats, tcfg.eval_k) << "\n";
            log_file.flush();
        }

        if ((e + 1) - result.best_epoch >= tcfg.patience) break;
    }
    if (result.best.tensors.empty()) result.best = result.last;
    return result;
}

// ---------------------------------------------------------------------------
// Hyperparameter sweeps
// ---------------------------------------------------------------------------

struct SweepRow {
    double value = 0;
    bool skipped = false;
    std::string note;
    MetricsReport metrics;
};

struct SweepTable {
    std::string axis;
    std::vector<SweepRow> rows;
};

std::string sweep_to_tsv(const SweepTable& t);
std::string sweep_to_text(const SweepTable& t);

/// Train once per axis value with a shared seed and report metrics of the
/// best checkpoint on the test split (validation, then training pairs, when
/// test is empty). Values that break the config are skipped with a note.
template <class Real = float>
SweepTable sweep(ModelConfig mcfg, TrainConfig tcfg, const PreparedDataset& data,
                 const std::string& axis, const std::vector<double>& values) {
    if (axis != "K" && axis != "lambda" && axis != "T")
        throw std::invalid_argument("sweep: axis must be one of K, lambda, T");
    SweepTable table;
    table.axis = axis;
    std::string base_out = tcfg.out_dir;
    for (double v : values) {
        SweepRow row;
        row.value = v;
        ModelConfig cfg = mcfg;
        try {
            if (axis == "lambda") {
                cfg.lambda = v;
            } else {
                if (v < 1 || v != std::floor(v))
                    throw std::invalid_argument(axis + " must be a positive integer, got " +
                                                std::to_string(v));
                if (axis == "K")
                    cfg.K = std::size_t(v);
                else
                    cfg.T = std::size_t(v);
            }
            cfg.n_items = data.n_items();
            cfg.validate();
        } catch (const std::exception& ex) {
            row.skipped = true;
            row.note = ex.what();
            table.rows.push_back(row);
            continue;
        }

        TrainConfig run_cfg = tcfg;
        if (!base_out.empty()) {
            std::string tag = axis + "=" + std::to_string(v);
            tag.erase(tag.find_last_not_of('0') + 1);
            if (!tag.empty() && tag.back() == '.') tag.pop_back();
            run_cfg.out_dir = base_out + "/" + tag;
        }
        auto trained = train<Real>(cfg, run_cfg, data);
        auto best_params = params_from_checkpoint<Real>(trained.best);

        const std::vector<SeqPair>* eval_pairs = &data.test_pairs;
        row.note = "test";
        if (eval_pairs->empty()) {
            eval_pairs = &data.valid_pairs;
            row.note = "valid";
        }
        if (eval_pairs->empty()) {
            eval_pairs = &data.train_pairs;
            row.note = "train";
        }
        row.metrics = evaluate_model(best_params, *eval_pairs, tcfg.batch_size, tcfg.eval_k);
        table.rows.push_back(row);
    }
    return table;
}

}  // namespace disen
