#include "disen/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "disen/data.hpp"
#include "disen/eval.hpp"
#include "disen/gradcheck.hpp"
#include "disen/model.hpp"
#include "disen/train.hpp"
#include "json.hpp"

namespace disen {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// DISEN_LOG={error,info,debug}; anything else falls back to info.
int log_level() {
    const char* env = std::getenv("DISEN_LOG");
    if (!env) return 1;
    std::string v(env);
    if (v == "error") return 0;
    if (v == "debug") return 2;
    return 1;
}

void log_error(const std::string& m) { std::cerr << "[error] " << m << "\n"; }
void log_warn(const std::string& m) {
    if (log_level() >= 1) std::cerr << "[warn] " << m << "\n";
}
void log_info(const std::string& m) {
    if (log_level() >= 1) std::cerr << "[info] " << m << "\n";
}
void log_debug(const std::string& m) {
    if (log_level() >= 2) std::cerr << "[debug] " << m << "\n";
}

void add_model_flags(CLI::App& cmd, ModelConfig& m) {
    cmd.add_option("--d", m.d, "embedding width")->capture_default_str();
    cmd.add_option("--K", m.K, "number of latent factors (must divide --d)")
        ->capture_default_str();
    cmd.add_option("--T", m.T, "gated propagation steps per layer")->capture_default_str();
    cmd.add_option("--L", m.L, "stacked graph layers")->capture_default_str();
    cmd.add_option("--lambda", m.lambda, "independence loss weight")->capture_default_str();
    cmd.add_option("--dropout", m.dropout, "inter-layer dropout rate")->capture_default_str();
    cmd.add_flag("--factor-similarity,!--no-factor-similarity", m.use_factor_similarity,
                 "weight graph edges by factor similarity")
        ->capture_default_str();
    cmd.add_flag("--residual-attention,!--no-residual-attention", m.use_residual_attention,
                 "blend stacked layers with residual attention")
        ->capture_default_str();
    cmd.add_flag("--share-ggnn,!--per-factor-ggnn", m.share_ggnn_across_factors,
                 "share propagation weights across factors")
        ->capture_default_str();
    cmd.add_flag("--share-attention,!--per-factor-attention", m.share_attention_across_factors,
                 "share pooling weights across factors")
        ->capture_default_str();
}

void add_train_flags(CLI::App& cmd, TrainConfig& t) {
    cmd.add_option("--epochs", t.epochs, "training epochs")->capture_default_str();
    cmd.add_option("--batch-size", t.batch_size, "sessions per batch")->capture_default_str();
    cmd.add_option("--lr", t.adam.base_lr, "initial learning rate")->capture_default_str();
    cmd.add_option("--lr-decay", t.adam.lr_decay, "learning rate decay factor")
        ->capture_default_str();
    cmd.add_option("--lr-decay-every", t.adam.lr_decay_every,
                   "epochs between decays (0 disables)")
        ->capture_default_str();
    cmd.add_option("--l2", t.adam.weight_decay, "weight decay on matrices")
        ->capture_default_str();
    cmd.add_option("--patience", t.patience, "epochs without improvement before stopping")
        ->capture_default_str();
    cmd.add_option("--k", t.eval_k, "metric cutoff for validation")->capture_default_str();
    cmd.add_option("--seed", t.seed, "root seed for init/shuffle/dropout streams")
        ->capture_default_str();
}

std::string strip(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Flat key=value configuration, keys named after the long flags. Values are
// fed through the command's own CLI11 options so they get the same parsing
// and validation as flags; options already given on the command line keep
// their value, which is how flags override the file.
void apply_config_file(CLI::App& cmd, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        auto text = strip(line);
        if (text.empty() || text[0] == '#' || text[0] == ';') continue;
        auto where = path + ":" + std::to_string(lineno);
        auto eq = text.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(where + ": expected key=value, got '" + text + "'");
        auto key = strip(text.substr(0, eq));
        auto value = strip(text.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        auto* op = cmd.get_option_no_throw("--" + key);
        if (!op) throw std::runtime_error(where + ": unknown configuration key '" + key + "'");
        if (op->count() > 0) continue;
        op->add_result(value);
        op->run_callback();
    }
}

const std::vector<SeqPair>& pick_split(const PreparedDataset& data, const std::string& split) {
    if (split == "train") return data.train_pairs;
    if (split == "valid") return data.valid_pairs;
    return data.test_pairs;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

// Shortest round-trip double formatting, so the archived config reloads to
// the exact values the run used.
std::string num(double v) { return json(v).dump(); }

std::string quote_str(const std::string& s) { return json(s).dump(); }

// key=value serialization of everything that shaped the run, in flag
// vocabulary: feeding this file back through --config reproduces the setup.
// CLI11's own config writer reports unset flags as false instead of their
// defaults, so the archive is built from the live structs instead.
void append_model_config(std::ostream& os, const ModelConfig& m) {
    os << "d=" << m.d << "\n"
       << "K=" << m.K << "\n"
       << "T=" << m.T << "\n"
       << "L=" << m.L << "\n"
       << "lambda=" << num(m.lambda) << "\n"
       << "dropout=" << num(m.dropout) << "\n"
       << "factor-similarity=" << (m.use_factor_similarity ? "true" : "false") << "\n"
       << "residual-attention=" << (m.use_residual_attention ? "true" : "false") << "\n"
       << "share-ggnn=" << (m.share_ggnn_across_factors ? "true" : "false") << "\n"
       << "share-attention=" << (m.share_attention_across_factors ? "true" : "false") << "\n";
}

void append_train_config(std::ostream& os, const TrainConfig& t) {
    os << "epochs=" << t.epochs << "\n"
       << "batch-size=" << t.batch_size << "\n"
       << "lr=" << num(t.adam.base_lr) << "\n"
       << "lr-decay=" << num(t.adam.lr_decay) << "\n"
       << "lr-decay-every=" << t.adam.lr_decay_every << "\n"
       << "l2=" << num(t.adam.weight_decay) << "\n"
       << "patience=" << t.patience << "\n"
       << "k=" << t.eval_k << "\n"
       << "seed=" << t.seed << "\n";
}

std::string metrics_line(const MetricsReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << "P@" << r.cutoff << "=" << r.precision_at_k
       << " MRR@" << r.cutoff << "=" << r.mrr_at_k << " n=" << r.n_evaluated;
    return os.str();
}

json metrics_json(const MetricsReport& r) {
    return json{{"k", r.cutoff},
                {"p_at_k", r.precision_at_k},
                {"mrr_at_k", r.mrr_at_k},
                {"n_evaluated", r.n_evaluated}};
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"disen: session-based recommendation over disentangled session graphs"};
    app.require_subcommand(1);
    int rc = 0;

    // --- preprocess ---------------------------------------------------------
    struct {
        std::string input, output, format = "tsv";
        PreprocessOptions opt;
        double test_last_fraction = 0.1;
        std::int64_t test_after_ts = 0;
    } P;
    auto* pre = app.add_subcommand("preprocess", "Filter, split, and augment a raw click log");
    pre->add_option("--input", P.input, "raw click log")->required()->check(CLI::ExistingFile);
    pre->add_option("--output", P.output, "directory for the prepared dataset")->required();
    pre->add_option("--format", P.format, "input format")
        ->check(CLI::IsMember({"tsv"}))
        ->capture_default_str();
    pre->add_option("--min-item-freq", P.opt.min_item_freq, "drop items clicked fewer times")
        ->capture_default_str();
    pre->add_option("--min-session-len", P.opt.min_session_len, "drop shorter sessions")
        ->capture_default_str();
    pre->add_option("--max-session-len", P.opt.max_session_len,
                    "truncate sessions to their most recent clicks")
        ->capture_default_str();
    auto* frac = pre->add_option("--test-last-fraction", P.test_last_fraction,
                                 "final fraction of the time range held out for test")
                     ->capture_default_str();
    auto* after = pre->add_option("--test-after-ts", P.test_after_ts,
                                  "absolute timestamp cut for the test split");
    frac->excludes(after);
    after->excludes(frac);
    pre->add_option("--valid-fraction", P.opt.valid_fraction,
                    "fraction of training pairs held out for validation")
        ->capture_default_str();
    pre->add_option("--seed", P.opt.seed, "seed for the validation split")
        ->capture_default_str();
    pre->callback([&] {
        P.opt.test_split = after->count() ? TimestampThreshold::absolute(P.test_after_ts)
                                          : TimestampThreshold::last_fraction(P.test_last_fraction);
        log_info("reading " + P.input);
        auto records = ingest(P.input, P.format);
        log_debug(std::to_string(records.size()) + " raw sessions");
        auto ds = preprocess(records, P.opt);
        if (ds.train_pairs.empty())
            throw std::runtime_error(
                "preprocessing left no training pairs; relax the filters or the test split");
        save_prepared(ds, P.output);
        std::cout << "sessions=" << ds.stats.sessions << " items=" << ds.stats.items
                  << " clicks=" << ds.stats.clicks << " train=" << ds.stats.train_pairs
                  << " valid=" << ds.stats.valid_pairs << " test=" << ds.stats.test_pairs
                  << "\n";
        log_info("prepared dataset written to " + P.output);
    });

    // --- synth --------------------------------------------------------------
    struct {
        std::string output;
        SynthOptions opt;
        std::uint64_t seed = 42;
    } S;
    auto* syn = app.add_subcommand("synth", "Generate a click log with planted factor structure");
    syn->add_option("--output", S.output, "path for the raw tab-separated log")->required();
    syn->add_option("--n-items", S.opt.n_items, "catalogue size")->capture_default_str();
    syn->add_option("--n-factors", S.opt.n_factors, "planted interest groups")
        ->capture_default_str();
    syn->add_option("--n-sessions", S.opt.n_sessions, "sessions to generate")
        ->capture_default_str();
    syn->add_option("--min-len", S.opt.min_len, "shortest session")->capture_default_str();
    syn->add_option("--max-len", S.opt.max_len, "longest session")->capture_default_str();
    syn->add_option("--noise", S.opt.noise, "chance of a uniformly random click")
        ->capture_default_str();
    syn->add_option("--seed", S.seed, "generator seed")->capture_default_str();
    syn->callback([&] {
        auto rng = substream(S.seed, "synth");
        auto records = synth_generate(S.opt, rng);
        save_raw(records, S.output);
        std::cout << "sessions=" << records.size() << " items=" << S.opt.n_items
                  << " factors=" << S.opt.n_factors << "\n";
        log_info("raw log written to " + S.output);
    });

    // --- train ---------------------------------------------------------------
    struct {
        std::string data, out, resume;
        ModelConfig m;
        TrainConfig t;
    } T;
    std::string train_config_path;
    auto* tr = app.add_subcommand("train", "Train on a prepared dataset");
    tr->add_option("--data", T.data, "prepared dataset directory")
        ->check(CLI::ExistingDirectory);
    tr->add_option("--out", T.out, "run directory for logs and checkpoints");
    tr->add_option("--resume", T.resume, "checkpoint to continue from")
        ->check(CLI::ExistingFile);
    tr->add_option("--config", train_config_path, "flat key=value file; command-line flags win")
        ->check(CLI::ExistingFile);
    add_model_flags(*tr, T.m);
    add_train_flags(*tr, T.t);
    tr->callback([&] {
        if (!train_config_path.empty()) apply_config_file(*tr, train_config_path);
        if (T.data.empty()) throw std::runtime_error("train: --data is required (flag or config)");
        if (T.out.empty()) throw std::runtime_error("train: --out is required (flag or config)");
        T.t.out_dir = T.out;
        // Archive the fully resolved configuration before anything can fail;
        // a run directory is an audit trail even for rejected configs.
        fs::create_directories(T.out);
        std::ostringstream resolved;
        resolved << "data=" << quote_str(T.data) << "\n"
                 << "out=" << quote_str(T.out) << "\n";
        if (!T.resume.empty()) resolved << "resume=" << quote_str(T.resume) << "\n";
        append_model_config(resolved, T.m);
        append_train_config(resolved, T.t);
        write_text(fs::path(T.out) / "config.resolved", resolved.str());
        auto data = load_prepared(T.data);
        log_info("loaded " + std::to_string(data.n_items()) + " items, " +
                 std::to_string(data.train_pairs.size()) + " train pairs");

        Checkpoint resume_ckpt;
        const Checkpoint* resume = nullptr;
        if (!T.resume.empty()) {
            resume_ckpt = load_checkpoint(T.resume);
            resume = &resume_ckpt;
            log_info("resuming from " + T.resume + " at epoch " +
                     std::to_string(resume_ckpt.epoch));
        }
        auto result = train<float>(T.m, T.t, data, resume);

        json report{{"epochs_run", result.history.empty()
                         ? std::size_t(0)
                         : result.history.back().epoch},
                    {"best_epoch", result.best_epoch},
                    {"best_valid_mrr", result.best_mrr},
                    {"k", T.t.eval_k}};
        if (!data.test_pairs.empty()) {
            auto best_params = params_from_checkpoint<float>(result.best);
            auto test = evaluate_model(best_params, data.test_pairs, T.t.batch_size, T.t.eval_k);
            report["test"] = metrics_json(test);
            std::cout << "test: " << metrics_line(test) << "\n";
        }
        write_text(fs::path(T.out) / "report.json", report.dump(2) + "\n");
        std::cout << "best epoch " << result.best_epoch << " valid MRR@" << T.t.eval_k << "="
                  << std::fixed << std::setprecision(6) << result.best_mrr << "\n";
        log_info("artifacts in " + T.out);
    });

    // --- eval -----------------------------------------------------------------
    struct {
        std::string checkpoint, data, split = "test", baseline = "none", out;
        std::size_t k = 20, batch_size = 100;
    } E;
    auto* ev = app.add_subcommand("eval", "Score a checkpoint or a baseline on one split");
    ev->add_option("--checkpoint", E.checkpoint, "model checkpoint")->check(CLI::ExistingFile);
    ev->add_option("--data", E.data, "prepared dataset directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    ev->add_option("--split", E.split, "which pairs to score")
        ->check(CLI::IsMember({"train", "valid", "test"}))
        ->capture_default_str();
    ev->add_option("--k", E.k, "metric cutoff")->capture_default_str();
    ev->add_option("--baseline", E.baseline, "score a reference model instead")
        ->check(CLI::IsMember({"none", "pop", "itemknn"}))
        ->capture_default_str();
    ev->add_option("--batch-size", E.batch_size, "sessions per forward pass")
        ->capture_default_str();
    ev->add_option("--out", E.out, "directory to write report.json into");
    ev->callback([&] {
        auto data = load_prepared(E.data);
        const auto& pairs = pick_split(data, E.split);
        if (pairs.empty()) throw std::runtime_error("eval: split '" + E.split + "' is empty");

        MetricsReport rep;
        if (E.baseline == "pop") {
            rep = evaluate_scorer(pop_baseline(data.train_pairs, data.n_items()), pairs, E.k);
        } else if (E.baseline == "itemknn") {
            rep = evaluate_scorer(itemknn_baseline(data.train_pairs, data.n_items()), pairs, E.k);
        } else {
            if (E.checkpoint.empty())
                throw std::runtime_error("eval: --checkpoint is required unless --baseline is set");
            auto ckpt = load_checkpoint(E.checkpoint);
            if (ckpt.vocab != data.vocab) {
                std::string msg = "eval: checkpoint vocabulary has " +
                                  std::to_string(ckpt.vocab.size()) + " items, dataset has " +
                                  std::to_string(data.vocab.size());
                if (ckpt.vocab.size() == data.vocab.size())
                    msg += " (same count, different items)";
                throw std::runtime_error(msg);
            }
            auto params = params_from_checkpoint<float>(ckpt);
            rep = evaluate_model(params, pairs, E.batch_size, E.k);
        }

        std::cout << "split=" << E.split << " baseline=" << E.baseline << "\n"
                  << metrics_line(rep) << "\n";
        if (!E.out.empty()) {
            fs::create_directories(E.out);
            json report = metrics_json(rep);
            report["split"] = E.split;
            report["baseline"] = E.baseline;
            write_text(fs::path(E.out) / "report.json", report.dump(2) + "\n");
            log_info("report written to " + E.out);
        }
    });

    // --- predict ---------------------------------------------------------------
    struct {
        std::string checkpoint, session;
        std::size_t top = 20;
    } R;
    auto* pr = app.add_subcommand("predict", "Rank next items for one session");
    pr->add_option("--checkpoint", R.checkpoint, "model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    pr->add_option("--session", R.session, "space-separated item ids, oldest first")->required();
    pr->add_option("--top", R.top, "how many items to print")->capture_default_str();
    pr->callback([&] {
        auto ckpt = load_checkpoint(R.checkpoint);
        auto params = params_from_checkpoint<float>(ckpt);
        std::unordered_map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < ckpt.vocab.size(); ++i) index[ckpt.vocab[i]] = i;

        std::vector<std::size_t> seq;
        std::istringstream ss(R.session);
        std::string id;
        while (ss >> id) {
            auto it = index.find(id);
            if (it == index.end())
                log_warn("dropping unknown item '" + id + "'");
            else
                seq.push_back(it->second);
        }
        if (seq.empty())
            throw std::runtime_error("predict: no session item is in the checkpoint vocabulary");

        Rng unused(0);
        auto batches = make_batches({{seq, 0}}, 1, params.cfg.n_items, unused, false);
        auto out = forward(params, batches[0], false);

        std::vector<std::size_t> order(params.cfg.n_items);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return out.yhat.val().at(0, a) > out.yhat.val().at(0, b);
        });
        std::size_t top = std::min(R.top, order.size());
        std::cout << "rank item probability\n" << std::fixed << std::setprecision(9);
        for (std::size_t r = 0; r < top; ++r)
            std::cout << r + 1 << " " << ckpt.vocab[order[r]] << " "
                      << double(out.yhat.val().at(0, order[r])) << "\n";
    });

    // --- gradcheck ---------------------------------------------------------------
    struct {
        ModelConfig m;
        std::uint64_t seed = 42;
        std::size_t n_items = 12;
        double h = 1e-5, tol = 1e-4;
        std::size_t max_entries = 0;
    } G;
    G.m.d = 8;
    G.m.K = 2;
    G.m.T = 1;
    G.m.L = 1;
    G.m.lambda = 2.0;
    G.m.dropout = 0.0;
    auto* gc = app.add_subcommand("gradcheck",
                                  "Finite-difference audit of the full loss gradient");
    gc->add_option("--d", G.m.d, "embedding width")->capture_default_str();
    gc->add_option("--K", G.m.K, "factors")->capture_default_str();
    gc->add_option("--T", G.m.T, "propagation steps")->capture_default_str();
    gc->add_option("--L", G.m.L, "layers")->capture_default_str();
    gc->add_option("--lambda", G.m.lambda, "independence weight")->capture_default_str();
    gc->add_option("--n-items", G.n_items, "catalogue size of the micro-batch")
        ->capture_default_str();
    gc->add_option("--seed", G.seed, "seed for parameters and batch")->capture_default_str();
    gc->add_option("--tol", G.tol, "relative error tolerance")->capture_default_str();
    gc->add_option("--max-entries-per-param", G.max_entries,
                   "cap checked entries per tensor (0 = all)")
        ->capture_default_str();
    gc->callback([&] {
        G.m.n_items = G.n_items;
        G.m.validate();
        auto init_rng = substream(G.seed, "init");
        auto params = init_params<double>(G.m, init_rng);

        // A deterministic micro-batch with mixed lengths and repeated items.
        auto batch_rng = substream(G.seed, "batch");
        std::vector<SeqPair> pairs;
        for (std::size_t len : {4, 3, 2}) {
            std::vector<std::size_t> s;
            for (std::size_t i = 0; i < len; ++i)
                s.push_back(std::size_t(batch_rng.uniform_index(G.n_items)));
            pairs.push_back({s, std::size_t(batch_rng.uniform_index(G.n_items))});
        }
        Rng unused(0);
        auto batches = make_batches(pairs, pairs.size(), G.m.n_items, unused, false);

        if (!g_corrupt_backward_op.empty())
            log_warn("backward rule for op '" + g_corrupt_backward_op +
                     "' is intentionally corrupted (test hook)");

        auto report = grad_check(
            params.store, [&] { return forward(params, batches[0], false).total; }, G.h, G.tol,
            G.max_entries);

        std::cout << "checked " << report.checked << " gradient entries\n"
                  << std::scientific << std::setprecision(3) << "worst relative error "
                  << report.max_rel_err << " at " << report.worst.param << "["
                  << report.worst.index << "]\n";
        if (report.ok) {
            std::cout << "PASS (tolerance " << G.tol << ")\n";
        } else {
            std::cout << "FAIL: " << report.failures.size() << " entries above tolerance "
                      << G.tol;
            if (!g_corrupt_backward_op.empty())
                std::cout << " with corrupted op '" << g_corrupt_backward_op << "'";
            std::cout << "\n";
            for (const auto& f : report.failures)
                std::cout << "  " << f.param << "[" << f.index << "]: analytic " << f.analytic
                          << " numeric " << f.numeric << " rel " << f.rel_err << "\n";
            rc = 1;
        }
    });

    // --- sweep ---------------------------------------------------------------
    struct {
        std::string data, out, axis;
        std::vector<double> values;
        ModelConfig m;
        TrainConfig t;
    } W;
    std::string sweep_config_path;
    auto* sw = app.add_subcommand("sweep", "Train once per value along one hyperparameter axis");
    sw->add_option("--data", W.data, "prepared dataset directory")
        ->check(CLI::ExistingDirectory);
    sw->add_option("--out", W.out, "directory for per-value runs and the summary");
    sw->add_option("--axis", W.axis, "hyperparameter to vary")
        ->check(CLI::IsMember({"K", "lambda", "T"}));
    sw->add_option("--values", W.values, "comma-separated axis values")->delimiter(',');
    sw->add_option("--config", sweep_config_path, "flat key=value file; command-line flags win")
        ->check(CLI::ExistingFile);
    add_model_flags(*sw, W.m);
    add_train_flags(*sw, W.t);
    sw->callback([&] {
        if (!sweep_config_path.empty()) apply_config_file(*sw, sweep_config_path);
        if (W.data.empty()) throw std::runtime_error("sweep: --data is required (flag or config)");
        if (W.out.empty()) throw std::runtime_error("sweep: --out is required (flag or config)");
        if (W.axis.empty() || W.values.empty())
            throw std::runtime_error("sweep: --axis and --values are required (flag or config)");
        auto data = load_prepared(W.data);
        W.t.out_dir = W.out;
        fs::create_directories(W.out);
        std::ostringstream resolved;
        resolved << "data=" << quote_str(W.data) << "\n"
                 << "out=" << quote_str(W.out) << "\n"
                 << "axis=" << quote_str(W.axis) << "\n"
                 << "values=\"";
        for (std::size_t i = 0; i < W.values.size(); ++i)
            resolved << (i ? "," : "") << num(W.values[i]);
        resolved << "\"\n";
        append_model_config(resolved, W.m);
        append_train_config(resolved, W.t);
        write_text(fs::path(W.out) / "config.resolved", resolved.str());
        auto table = sweep<float>(W.m, W.t, data, W.axis, W.values);
        write_text(fs::path(W.out) / "sweep.tsv", sweep_to_tsv(table));
        std::cout << sweep_to_text(table);
        log_info("summary written to " + (fs::path(W.out) / "sweep.tsv").string());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        log_error(e.what());
        return 1;
    }
    return rc;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.push_back("disen");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const auto& s : full) argv.push_back(s.c_str());
    return run_cli(int(argv.size()), argv.data());
}

}  // namespace disen
