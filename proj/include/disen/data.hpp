#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "disen/rng.hpp"

namespace disen {

struct SessionEvent {
    std::string item_id;
    std::int64_t timestamp = 0;
};

struct SessionRecord {
    std::string session_id;
    std::vector<SessionEvent> events;  // time-sorted, ties in file order
};

/// One training example: a click prefix and the item clicked next.
struct SeqPair {
    std::vector<std::size_t> sequence;
    std::size_t label = 0;
};

inline bool operator==(const SeqPair& a, const SeqPair& b) {
    return a.sequence == b.sequence && a.label == b.label;
}

struct DatasetStats {
    std::size_t clicks = 0;    // events across surviving sessions
    std::size_t sessions = 0;  // surviving sessions
    std::size_t items = 0;     // vocabulary size
    double avg_length = 0.0;
    std::size_t max_length = 0;
    std::size_t train_pairs = 0;
    std::size_t valid_pairs = 0;
    std::size_t test_pairs = 0;
    std::int64_t test_threshold = 0;  // resolved split timestamp
};

struct PreparedDataset {
    std::vector<std::string> vocab;                      // index -> item id
    std::unordered_map<std::string, std::size_t> index;  // item id -> index
    std::vector<SeqPair> train_pairs;
    std::vector<SeqPair> valid_pairs;
    std::vector<SeqPair> test_pairs;
    DatasetStats stats;

    std::size_t n_items() const { return vocab.size(); }
    std::size_t pad_index() const { return vocab.size(); }  // sentinel, never embedded
};

/// Mini-batch with right-padding. Pad positions carry pad_index and mask 0.
struct Batch {
    std::size_t max_len = 0;
    std::size_t pad_index = 0;
    std::vector<std::size_t> seqs;     // size() * max_len, row-major
    std::vector<std::size_t> lengths;  // true lengths
    std::vector<std::size_t> labels;
    std::vector<char> mask;  // size() * max_len, 1 at real positions

    std::size_t size() const { return lengths.size(); }
    std::size_t item_at(std::size_t s, std::size_t pos) const { return seqs[s * max_len + pos]; }
};

/// Where in time to cut train from test.
struct TimestampThreshold {
    enum class Kind { absolute, last_fraction };
    Kind kind = Kind::last_fraction;
    std::int64_t value = 0;
    double fraction = 0.1;

    static TimestampThreshold absolute(std::int64_t t) {
        return {Kind::absolute, t, 0.0};
    }
    /// Sessions whose last click falls in the final `f` of the observed
    /// time range become test data.
    static TimestampThreshold last_fraction(double f);
};

struct PreprocessOptions {
    int min_item_freq = 5;
    int min_session_len = 2;
    std::size_t max_session_len = 30;  // truncation keeps the most recent clicks
    TimestampThreshold test_split = TimestampThreshold::last_fraction(0.1);
    double valid_fraction = 0.1;
    std::uint64_t seed = 42;
};

/// Parse the tab-separated click log `session_id<TAB>item_id<TAB>timestamp`.
/// An optional header line is detected by a non-numeric third field. Events
/// are grouped by session (first-appearance order) and sorted by timestamp,
/// ties keeping file order. Only format "tsv" is supported.
std::vector<SessionRecord> ingest(const std::string& path, const std::string& format = "tsv");

/// Filtering, temporal split, vocabulary, prefix augmentation, validation
/// split. Item and session filters are iterated to a fixed point because
/// dropping items can shorten sessions below the length floor.
PreparedDataset preprocess(const std::vector<SessionRecord>& records,
                           const PreprocessOptions& opt = {});

/// Batch pairs in order (or a seeded shuffle of it) and right-pad.
std::vector<Batch> make_batches(const std::vector<SeqPair>& pairs, std::size_t batch_size,
                                std::size_t pad_index, Rng& rng, bool shuffle);

struct SynthOptions {
    std::size_t n_items = 50;
    std::size_t n_factors = 4;
    std::size_t n_sessions = 400;
    std::size_t min_len = 4;
    std::size_t max_len = 10;
    double noise = 0.2;  // probability of a uniformly random item per click
};

/// Synthetic click log with planted factor structure: items belong to
/// factors round-robin, each session walks within one factor of interest
/// except for noise clicks.
std::vector<SessionRecord> synth_generate(const SynthOptions& opt, Rng& rng);

/// Write records back out in the ingestable tab-separated layout.
void save_raw(const std::vector<SessionRecord>& records, const std::string& path);

/// Directory layout: vocab.tsv, train.txt, valid.txt, test.txt, stats.json.
void save_prepared(const PreparedDataset& ds, const std::string& dir);
PreparedDataset load_prepared(const std::string& dir);

}  // namespace disen
