#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "disen/autodiff.hpp"
#include "disen/cli.hpp"
#include "disen/eval.hpp"
#include "disen/train.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

// Run a whole command in-process with stdout/stderr captured.
int run(const std::vector<std::string>& args, std::string* out = nullptr,
        std::string* err = nullptr) {
    std::ostringstream o, e;
    auto* old_out = std::cout.rdbuf(o.rdbuf());
    auto* old_err = std::cerr.rdbuf(e.rdbuf());
    int rc = disen::run_cli(args);
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    if (out) *out = o.str();
    if (err) *err = e.str();
    return rc;
}

std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) lines.push_back(line);
    return lines;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub) const { return (path / sub).string(); }
};

// Shared corpus: synthetic raw log plus its prepared dataset.
void make_corpus(const TempDir& tmp) {
    REQUIRE(run({"synth", "--output", tmp.str("raw.tsv"), "--n-items", "30", "--n-sessions",
                 "80", "--seed", "3"}) == 0);
    REQUIRE(run({"preprocess", "--input", tmp.str("raw.tsv"), "--output", tmp.str("prep"),
                 "--min-item-freq", "1"}) == 0);
}

std::vector<std::string> train_fast(const TempDir& tmp, const std::string& out) {
    return {"train", "--data", tmp.str("prep"), "--out", tmp.str(out), "--d", "16",
            "--K",   "2",      "--T",    "1",   "--L",   "1",          "--epochs", "2",
            "--batch-size", "64", "--seed", "5"};
}

}  // namespace

TEST_CASE("cli: synth and preprocess produce a loadable dataset") {
    TempDir tmp("disen_cli_prep");
    std::string out;
    REQUIRE(run({"synth", "--output", tmp.str("raw.tsv"), "--n-items", "30", "--n-sessions",
                 "80", "--seed", "3"},
                &out) == 0);
    CHECK(out.find("sessions=80") != std::string::npos);

    REQUIRE(run({"preprocess", "--input", tmp.str("raw.tsv"), "--output", tmp.str("prep"),
                 "--min-item-freq", "1"},
                &out) == 0);
    CHECK(out.find("train=") != std::string::npos);
    auto ds = disen::load_prepared(tmp.str("prep"));
    CHECK(ds.n_items() > 0);
    CHECK(!ds.train_pairs.empty());
    CHECK(!ds.test_pairs.empty());

    // Identical inputs and seed give identical outputs, file for file.
    REQUIRE(run({"preprocess", "--input", tmp.str("raw.tsv"), "--output", tmp.str("prep_b"),
                 "--min-item-freq", "1"}) == 0);
    for (const char* f : {"vocab.tsv", "train.txt", "valid.txt", "test.txt", "stats.json"})
        CHECK(slurp(tmp.path / "prep" / f) == slurp(tmp.path / "prep_b" / f));

    // Missing input: nonzero exit, nothing written.
    CHECK(run({"preprocess", "--input", tmp.str("absent.tsv"), "--output", tmp.str("nope")}) !=
          0);
    CHECK(!fs::exists(tmp.path / "nope"));
}

TEST_CASE("cli: train writes the full artifact set") {
    TempDir tmp("disen_cli_train");
    make_corpus(tmp);
    std::string out;
    REQUIRE(run(train_fast(tmp, "run"), &out) == 0);
    CHECK(out.find("best epoch") != std::string::npos);

    for (const char* f : {"config.resolved", "epochs.jsonl", "best.ckpt", "last.ckpt",
                          "report.json"})
        CHECK(fs::exists(tmp.path / "run" / f));

    auto resolved = slurp(tmp.path / "run" / "config.resolved");
    CHECK(resolved.find("d=16") != std::string::npos);
    CHECK(resolved.find("K=2") != std::string::npos);
    // Defaults that were never touched on the command line are archived too.
    CHECK(resolved.find("residual-attention=true") != std::string::npos);
    CHECK(resolved.find("lr=0.005") != std::string::npos);

    auto log_lines = lines_of(slurp(tmp.path / "run" / "epochs.jsonl"));
    CHECK(log_lines.size() == 2);
    auto first = nlohmann::json::parse(log_lines[0]);
    CHECK(first.at("epoch").get<int>() == 1);
    CHECK(first.at("train_loss").get<double>() > 0.0);

    auto report = nlohmann::json::parse(slurp(tmp.path / "run" / "report.json"));
    CHECK(report.at("best_epoch").get<int>() >= 1);
    CHECK(report.at("test").at("n_evaluated").get<int>() > 0);

    // The checkpoint loads and matches the dataset vocabulary.
    auto ckpt = disen::load_checkpoint(tmp.str("run") + "/best.ckpt");
    auto ds = disen::load_prepared(tmp.str("prep"));
    CHECK(ckpt.vocab == ds.vocab);

    // A structurally invalid configuration is rejected before training.
    std::string err;
    CHECK(run({"train", "--data", tmp.str("prep"), "--out", tmp.str("bad"), "--d", "16", "--K",
               "3", "--epochs", "1"},
              nullptr, &err) != 0);
    CHECK(err.find("multiple of K") != std::string::npos);
    CHECK(!fs::exists(tmp.path / "bad" / "epochs.jsonl"));
}

TEST_CASE("cli: config file fills in what flags leave unset") {
    TempDir tmp("disen_cli_config");
    make_corpus(tmp);
    std::ofstream(tmp.path / "cfg.txt") << "d=16\nK=4\nepochs=1\nbatch-size=64\nlambda=3.5\n"
                                        << "# comment lines are fine\n";
    REQUIRE(run({"train", "--data", tmp.str("prep"), "--out", tmp.str("run"), "--config",
                 tmp.str("cfg.txt"), "--K", "2", "--T", "1", "--L", "1"}) == 0);
    auto resolved = slurp(tmp.path / "run" / "config.resolved");
    CHECK(resolved.find("d=16") != std::string::npos);      // from the file
    CHECK(resolved.find("K=2") != std::string::npos);       // flag beats file
    CHECK(resolved.find("lambda=3.5") != std::string::npos);
    CHECK(resolved.find("epochs=1") != std::string::npos);

    // The archived resolve is itself a valid config: replaying it reproduces
    // the run byte for byte.
    REQUIRE(run({"train", "--config", tmp.str("run") + "/config.resolved", "--out",
                 tmp.str("replay")}) == 0);
    CHECK(slurp(tmp.path / "run" / "best.ckpt") == slurp(tmp.path / "replay" / "best.ckpt"));

    std::string err;
    std::ofstream(tmp.path / "bad.txt") << "no_such_flag=1\n";
    CHECK(run({"train", "--data", tmp.str("prep"), "--out", tmp.str("x"), "--config",
               tmp.str("bad.txt")},
              nullptr, &err) == 1);
    CHECK(err.find("unknown configuration key") != std::string::npos);

    std::ofstream(tmp.path / "mangled.txt") << "just some words\n";
    CHECK(run({"train", "--data", tmp.str("prep"), "--out", tmp.str("y"), "--config",
               tmp.str("mangled.txt")},
              nullptr, &err) == 1);

    // --data via config only, no flag.
    std::ofstream(tmp.path / "full.txt") << "data=" << tmp.str("prep")
                                         << "\nd=16\nK=2\nT=1\nL=1\nepochs=1\nbatch-size=64\n";
    CHECK(run({"train", "--config", tmp.str("full.txt"), "--out", tmp.str("z")}) == 0);
}

TEST_CASE("cli: lambda weights the independence term in the logged loss") {
    TempDir tmp("disen_cli_lambda");
    make_corpus(tmp);
    auto args10 = train_fast(tmp, "run10");
    args10.insert(args10.end(), {"--lambda", "10"});
    auto args0 = train_fast(tmp, "run0");
    args0.insert(args0.end(), {"--lambda", "0"});
    REQUIRE(run(args10) == 0);
    REQUIRE(run(args0) == 0);

    auto l10 = nlohmann::json::parse(lines_of(slurp(tmp.path / "run10" / "epochs.jsonl"))[0]);
    auto l0 = nlohmann::json::parse(lines_of(slurp(tmp.path / "run0" / "epochs.jsonl"))[0]);
    // The raw independence loss is measured either way.
    CHECK(l10.at("dec_loss").get<double>() > 0.0);
    CHECK(l0.at("dec_loss").get<double>() > 0.0);
    // With lambda = 0 it no longer inflates the optimized total.
    CHECK(l10.at("train_loss").get<double>() >
          l0.at("train_loss").get<double>() + l0.at("dec_loss").get<double>());
}

TEST_CASE("cli: eval agrees with the library on baselines and checkpoints") {
    TempDir tmp("disen_cli_eval");
    make_corpus(tmp);
    REQUIRE(run(train_fast(tmp, "run")) == 0);
    auto ds = disen::load_prepared(tmp.str("prep"));

    std::string out;
    REQUIRE(run({"eval", "--data", tmp.str("prep"), "--baseline", "pop", "--split", "test",
                 "--out", tmp.str("pop_report")},
                &out) == 0);
    CHECK(out.find("P@20=") != std::string::npos);
    auto report = nlohmann::json::parse(slurp(tmp.path / "pop_report" / "report.json"));
    auto expect = disen::evaluate_scorer(disen::pop_baseline(ds.train_pairs, ds.n_items()),
                                         ds.test_pairs, 20);
    CHECK(report.at("p_at_k").get<double>() == expect.precision_at_k);
    CHECK(report.at("mrr_at_k").get<double>() == expect.mrr_at_k);
    CHECK(report.at("baseline").get<std::string>() == "pop");

    REQUIRE(run({"eval", "--data", tmp.str("prep"), "--baseline", "itemknn", "--split", "test",
                 "--out", tmp.str("knn_report")}) == 0);
    auto knn = nlohmann::json::parse(slurp(tmp.path / "knn_report" / "report.json"));
    auto knn_expect = disen::evaluate_scorer(
        disen::itemknn_baseline(ds.train_pairs, ds.n_items()), ds.test_pairs, 20);
    CHECK(knn.at("p_at_k").get<double>() == knn_expect.precision_at_k);

    REQUIRE(run({"eval", "--data", tmp.str("prep"), "--checkpoint", tmp.str("run") + "/best.ckpt",
                 "--split", "test", "--k", "10", "--out", tmp.str("model_report")}) == 0);
    auto model_report = nlohmann::json::parse(slurp(tmp.path / "model_report" / "report.json"));
    auto params = disen::params_from_checkpoint<float>(
        disen::load_checkpoint(tmp.str("run") + "/best.ckpt"));
    auto model_expect = disen::evaluate_model(params, ds.test_pairs, 100, 10);
    CHECK(model_report.at("p_at_k").get<double>() == model_expect.precision_at_k);
    CHECK(model_report.at("mrr_at_k").get<double>() == model_expect.mrr_at_k);

    // No checkpoint and no baseline is an error.
    CHECK(run({"eval", "--data", tmp.str("prep")}) == 1);
}

TEST_CASE("cli: eval rejects a checkpoint from a different vocabulary") {
    TempDir tmp("disen_cli_vocab");
    make_corpus(tmp);
    REQUIRE(run(train_fast(tmp, "run")) == 0);
    REQUIRE(run({"synth", "--output", tmp.str("raw2.tsv"), "--n-items", "23", "--n-sessions",
                 "60", "--seed", "4"}) == 0);
    REQUIRE(run({"preprocess", "--input", tmp.str("raw2.tsv"), "--output", tmp.str("prep2"),
                 "--min-item-freq", "1"}) == 0);

    auto other = disen::load_prepared(tmp.str("prep2"));
    std::string err;
    CHECK(run({"eval", "--data", tmp.str("prep2"), "--checkpoint", tmp.str("run") + "/best.ckpt",
               "--split", "test"},
              nullptr, &err) == 1);
    CHECK(err.find("30") != std::string::npos);
    CHECK(err.find(std::to_string(other.n_items())) != std::string::npos);
}

TEST_CASE("cli: predict is deterministic and consistent with the model") {
    TempDir tmp("disen_cli_predict");
    make_corpus(tmp);
    REQUIRE(run(train_fast(tmp, "run")) == 0);
    auto ckpt_path = tmp.str("run") + "/best.ckpt";
    auto ds = disen::load_prepared(tmp.str("prep"));

    // Full-vocabulary dump: probabilities are a distribution.
    std::string out;
    REQUIRE(run({"predict", "--checkpoint", ckpt_path, "--session",
                 ds.vocab[0] + " " + ds.vocab[1], "--top", std::to_string(ds.n_items())},
                &out) == 0);
    auto rows = lines_of(out);
    REQUIRE(rows.size() == ds.n_items() + 1);  // header + one row per item
    double sum = 0, prev = 1.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::istringstream ss(rows[i]);
        std::size_t rank;
        std::string item;
        double prob;
        ss >> rank >> item >> prob;
        CHECK(rank == i);
        CHECK(prob <= prev + 1e-12);
        prev = prob;
        sum += prob;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

    // Same command, same answer.
    std::string out2;
    REQUIRE(run({"predict", "--checkpoint", ckpt_path, "--session",
                 ds.vocab[0] + " " + ds.vocab[1], "--top", std::to_string(ds.n_items())},
                &out2) == 0);
    CHECK(out == out2);

    // The printed order equals the model's own ranking of the same session.
    auto params = disen::params_from_checkpoint<float>(disen::load_checkpoint(ckpt_path));
    disen::Rng unused(0);
    auto batches = disen::make_batches({{{0, 1}, 0}}, 1, params.cfg.n_items, unused, false);
    auto fwd = disen::forward(params, batches[0], false);
    std::vector<double> scores(params.cfg.n_items);
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = double(fwd.yhat.val().at(0, i));
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::istringstream ss(rows[i]);
        std::size_t rank;
        std::string item;
        ss >> rank >> item;
        CHECK(disen::rank_of(scores, ds.index.at(item)) == rank);
    }

    // Unknown items are dropped with a warning; losing all of them is fatal.
    std::string err;
    REQUIRE(run({"predict", "--checkpoint", ckpt_path, "--session", ds.vocab[2] + " martian"},
                &out, &err) == 0);
    CHECK(err.find("martian") != std::string::npos);
    CHECK(run({"predict", "--checkpoint", ckpt_path, "--session", "martian venusian"}, nullptr,
              &err) == 1);
    CHECK(err.find("vocabulary") != std::string::npos);

    // Single-item sessions are fine.
    CHECK(run({"predict", "--checkpoint", ckpt_path, "--session", ds.vocab[0]}) == 0);
}

TEST_CASE("cli: gradcheck passes clean and fails under fault injection") {
    std::string out;
    REQUIRE(run({"gradcheck"}, &out) == 0);
    CHECK(out.find("PASS") != std::string::npos);

    REQUIRE(run({"gradcheck", "--T", "2", "--L", "2", "--seed", "9"}, &out) == 0);
    CHECK(out.find("PASS") != std::string::npos);

    // Corrupt one backward rule through the test hook: the check must fail
    // and say which op was sabotaged.
    disen::g_corrupt_backward_op = "matmul";
    int rc = run({"gradcheck"}, &out);
    disen::g_corrupt_backward_op.clear();
    CHECK(rc == 1);
    CHECK(out.find("FAIL") != std::string::npos);
    CHECK(out.find("matmul") != std::string::npos);
}

TEST_CASE("cli: sweep writes a summary and per-value runs") {
    TempDir tmp("disen_cli_sweep");
    make_corpus(tmp);
    std::string out;
    REQUIRE(run({"sweep", "--data", tmp.str("prep"), "--out", tmp.str("sw"), "--axis", "K",
                 "--values", "1,3,2", "--d", "16", "--T", "1", "--L", "1", "--epochs", "1",
                 "--batch-size", "64"},
                &out) == 0);
    CHECK(out.find("skipped") != std::string::npos);

    auto tsv = lines_of(slurp(tmp.path / "sw" / "sweep.tsv"));
    REQUIRE(tsv.size() == 4);
    CHECK(tsv[1].find("ok") != std::string::npos);
    CHECK(tsv[2].find("skipped") != std::string::npos);
    CHECK(tsv[3].find("ok") != std::string::npos);
    CHECK(fs::exists(tmp.path / "sw" / "K=1" / "best.ckpt"));
    CHECK(fs::exists(tmp.path / "sw" / "K=2" / "best.ckpt"));
    CHECK(!fs::exists(tmp.path / "sw" / "K=3"));
    CHECK(fs::exists(tmp.path / "sw" / "config.resolved"));
}

TEST_CASE("cli: commands leave their inputs untouched") {
    TempDir tmp("disen_cli_readonly");
    make_corpus(tmp);
    auto raw_before = slurp(tmp.path / "raw.tsv");
    std::vector<std::string> prep_before;
    for (const char* f : {"vocab.tsv", "train.txt", "valid.txt", "test.txt", "stats.json"})
        prep_before.push_back(slurp(tmp.path / "prep" / f));

    REQUIRE(run(train_fast(tmp, "run")) == 0);
    REQUIRE(run({"eval", "--data", tmp.str("prep"), "--baseline", "pop"}) == 0);

    CHECK(slurp(tmp.path / "raw.tsv") == raw_before);
    std::size_t i = 0;
    for (const char* f : {"vocab.tsv", "train.txt", "valid.txt", "test.txt", "stats.json"})
        CHECK(slurp(tmp.path / "prep" / f) == prep_before[i++]);
}

TEST_CASE("cli: usage errors exit nonzero, help exits zero") {
    std::string out, err;
    CHECK(run({}, &out, &err) != 0);
    CHECK(run({"train", "--no-such-flag"}, &out, &err) != 0);
    CHECK(run({"--help"}, &out, &err) == 0);
    CHECK(out.find("disen") != std::string::npos);
    CHECK(run({"train", "--help"}, &out, &err) == 0);
    CHECK(out.find("--epochs") != std::string::npos);
}
