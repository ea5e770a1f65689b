#include "disen/data.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace disen {

namespace {

bool parse_i64(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

[[noreturn]] void malformed(const std::string& path, std::size_t line_no, const std::string& why) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + why);
}

}  // namespace

TimestampThreshold TimestampThreshold::last_fraction(double f) {
    if (f < 0.0 || f > 1.0)
        throw std::invalid_argument("test fraction must be in [0,1], got " + std::to_string(f));
    TimestampThreshold t;
    t.kind = Kind::last_fraction;
    t.fraction = f;
    return t;
}

std::vector<SessionRecord> ingest(const std::string& path, const std::string& format) {
    if (format != "tsv")
        throw std::invalid_argument("unsupported ingest format: " + format);
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);

    std::vector<SessionRecord> records;
    std::unordered_map<std::string, std::size_t> slot;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (in.peek() == std::char_traits<char>::eof()) break;  // trailing newline
            malformed(path, line_no, "empty line");
        }
        auto fields = split_tabs(line);
        if (fields.size() != 3)
            malformed(path, line_no,
                      "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
        std::int64_t ts;
        if (!parse_i64(fields[2], ts)) {
            if (line_no == 1) continue;  // header row
            malformed(path, line_no, "timestamp is not an integer: " + fields[2]);
        }
        auto [it, inserted] = slot.try_emplace(fields[0], records.size());
        if (inserted) records.push_back({fields[0], {}});
        records[it->second].events.push_back({fields[1], ts});
    }

    for (auto& rec : records)
        std::stable_sort(rec.events.begin(), rec.events.end(),
                         [](const SessionEvent& a, const SessionEvent& b) {
                             return a.timestamp < b.timestamp;
                         });
    return records;
}

PreparedDataset preprocess(const std::vector<SessionRecord>& records,
                           const PreprocessOptions& opt) {
    // Working copy: item sequences plus the timestamp of each click.
    struct Work {
        std::vector<std::string> items;
        std::vector<std::int64_t> times;
    };
    std::vector<Work> sessions;
    sessions.reserve(records.size());
    for (const auto& rec : records) {
        Work w;
        std::size_t n = rec.events.size();
        std::size_t start = n > opt.max_session_len ? n - opt.max_session_len : 0;
        for (std::size_t i = start; i < n; ++i) {
            w.items.push_back(rec.events[i].item_id);
            w.times.push_back(rec.events[i].timestamp);
        }
        if (!w.items.empty()) sessions.push_back(std::move(w));
    }

    // Alternate the item-frequency and session-length filters until neither
    // removes anything.
    while (true) {
        std::unordered_map<std::string, int> freq;
        for (const auto& s : sessions)
            for (const auto& it : s.items) ++freq[it];

        bool removed = false;
        std::vector<Work> next;
        next.reserve(sessions.size());
        for (auto& s : sessions) {
            Work w;
            for (std::size_t i = 0; i < s.items.size(); ++i) {
                if (freq[s.items[i]] >= opt.min_item_freq) {
                    w.items.push_back(std::move(s.items[i]));
                    w.times.push_back(s.times[i]);
                } else {
                    removed = true;
                }
            }
            if (w.items.size() >= std::size_t(opt.min_session_len)) {
                next.push_back(std::move(w));
            } else {
                removed = true;
            }
        }
        sessions = std::move(next);
        if (!removed) break;
    }
    if (sessions.empty())
        throw std::runtime_error("preprocessing removed every session; nothing left to prepare");

    // Temporal split on each surviving session's last click.
    std::int64_t min_last = std::numeric_limits<std::int64_t>::max();
    std::int64_t max_last = std::numeric_limits<std::int64_t>::min();
    for (const auto& s : sessions) {
        min_last = std::min(min_last, s.times.back());
        max_last = std::max(max_last, s.times.back());
    }
    std::int64_t threshold;
    if (opt.test_split.kind == TimestampThreshold::Kind::absolute) {
        threshold = opt.test_split.value;
    } else {
        double span = double(max_last - min_last);
        threshold = min_last + std::int64_t((1.0 - opt.test_split.fraction) * span);
    }

    std::vector<const Work*> train_sessions, test_sessions;
    for (const auto& s : sessions)
        (s.times.back() >= threshold ? test_sessions : train_sessions).push_back(&s);
    if (train_sessions.empty())
        throw std::runtime_error("temporal split left no training sessions; lower the threshold");

    PreparedDataset ds;
    for (const auto* s : train_sessions)
        for (const auto& it : s->items)
            if (ds.index.try_emplace(it, ds.vocab.size()).second) ds.vocab.push_back(it);

    auto augment = [&](const Work& s, std::vector<SeqPair>& out, bool drop_oov) {
        std::vector<std::size_t> prefix;
        prefix.reserve(s.items.size());
        bool prefix_ok = true;
        for (std::size_t i = 0; i + 1 < s.items.size(); ++i) {
            auto it = ds.index.find(s.items[i]);
            if (it == ds.index.end()) {
                prefix_ok = false;
                if (!drop_oov) throw std::logic_error("training item missing from vocabulary");
            } else {
                prefix.push_back(it->second);
            }
            auto lbl = ds.index.find(s.items[i + 1]);
            if (!prefix_ok || lbl == ds.index.end()) {
                if (!drop_oov) throw std::logic_error("training item missing from vocabulary");
                continue;
            }
            out.push_back({prefix, lbl->second});
        }
    };
    for (const auto* s : train_sessions) augment(*s, ds.train_pairs, false);
    for (const auto* s : test_sessions) augment(*s, ds.test_pairs, true);

    // Seeded validation carve-out, both halves keeping their original order.
    std::size_t n_valid = std::size_t(opt.valid_fraction * double(ds.train_pairs.size()));
    if (n_valid > 0) {
        std::vector<std::size_t> idx(ds.train_pairs.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        auto rng = substream(opt.seed, "valid-split");
        rng.shuffle(idx);
        std::vector<char> to_valid(ds.train_pairs.size(), 0);
        for (std::size_t i = 0; i < n_valid; ++i) to_valid[idx[i]] = 1;
        std::vector<SeqPair> kept;
        for (std::size_t i = 0; i < ds.train_pairs.size(); ++i)
            (to_valid[i] ? ds.valid_pairs : kept).push_back(std::move(ds.train_pairs[i]));
        ds.train_pairs = std::move(kept);
    }

    auto& st = ds.stats;
    for (const auto& s : sessions) {
        st.clicks += s.items.size();
        st.max_length = std::max(st.max_length, s.items.size());
    }
    st.sessions = sessions.size();
    st.items = ds.vocab.size();
    st.avg_length = double(st.clicks) / double(st.sessions);
    st.train_pairs = ds.train_pairs.size();
    st.valid_pairs = ds.valid_pairs.size();
    st.test_pairs = ds.test_pairs.size();
    st.test_threshold = threshold;
    return ds;
}

std::vector<Batch> make_batches(const std::vector<SeqPair>& pairs, std::size_t batch_size,
                                std::size_t pad_index, Rng& rng, bool shuffle) {
    if (pairs.empty()) throw std::invalid_argument("make_batches: no pairs");
    if (batch_size == 0) throw std::invalid_argument("make_batches: batch size 0");

    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle) rng.shuffle(order);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        std::size_t end = std::min(start + batch_size, order.size());
        Batch b;
        b.pad_index = pad_index;
        for (std::size_t i = start; i < end; ++i)
            b.max_len = std::max(b.max_len, pairs[order[i]].sequence.size());
        for (std::size_t i = start; i < end; ++i) {
            const auto& p = pairs[order[i]];
            b.lengths.push_back(p.sequence.size());
            b.labels.push_back(p.label);
            for (std::size_t j = 0; j < b.max_len; ++j) {
                bool real = j < p.sequence.size();
                b.seqs.push_back(real ? p.sequence[j] : pad_index);
                b.mask.push_back(real ? 1 : 0);
            }
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

std::vector<SessionRecord> synth_generate(const SynthOptions& opt, Rng& rng) {
    if (opt.n_items < opt.n_factors)
        throw std::invalid_argument("synth: need at least as many items as factors");
    if (opt.noise < 0.0 || opt.noise > 1.0)
        throw std::invalid_argument("synth: noise must be in [0,1]");
    if (opt.min_len < 1 || opt.min_len > opt.max_len)
        throw std::invalid_argument("synth: bad session length range");

    // Items belong to factors round-robin, so factor f owns {f, f+K, f+2K, ...}.
    auto factor_of = [&](std::size_t item) { return item % opt.n_factors; };
    std::vector<std::vector<std::size_t>> members(opt.n_factors);
    for (std::size_t i = 0; i < opt.n_items; ++i) members[factor_of(i)].push_back(i);

    std::vector<SessionRecord> records;
    records.reserve(opt.n_sessions);
    for (std::size_t s = 0; s < opt.n_sessions; ++s) {
        std::size_t f = rng.uniform_index(opt.n_factors);
        std::size_t len = opt.min_len + rng.uniform_index(opt.max_len - opt.min_len + 1);
        SessionRecord rec;
        rec.session_id = "synth_" + std::to_string(s);
        for (std::size_t j = 0; j < len; ++j) {
            std::size_t item;
            if (rng.uniform() < opt.noise) {
                item = rng.uniform_index(opt.n_items);
            } else {
                const auto& pool = members[f];
                item = pool[rng.uniform_index(pool.size())];
            }
            rec.events.push_back({"item_" + std::to_string(item),
                                  std::int64_t(s) * 1000 + std::int64_t(j)});
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void save_raw(const std::vector<SessionRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "session_id\titem_id\ttimestamp\n";
    for (const auto& rec : records)
        for (const auto& ev : rec.events)
            out << rec.session_id << '\t' << ev.item_id << '\t' << ev.timestamp << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

void save_pairs(const std::vector<SeqPair>& pairs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& p : pairs) {
        for (auto idx : p.sequence) out << idx << ' ';
        out << p.label << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<SeqPair> load_pairs(const std::string& path, std::size_t n_items) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<SeqPair> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<std::size_t> toks;
        std::size_t v;
        while (ss >> v) {
            if (v >= n_items) malformed(path, line_no, "item index out of range");
            toks.push_back(v);
        }
        if (!ss.eof()) malformed(path, line_no, "non-numeric token");
        if (toks.size() < 2) malformed(path, line_no, "need a sequence and a label");
        SeqPair p;
        p.label = toks.back();
        toks.pop_back();
        p.sequence = std::move(toks);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace

void save_prepared(const PreparedDataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto at = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };

    std::ofstream vocab(at("vocab.tsv"));
    if (!vocab) throw std::runtime_error("cannot write " + at("vocab.tsv"));
    for (std::size_t i = 0; i < ds.vocab.size(); ++i) vocab << i << '\t' << ds.vocab[i] << '\n';
    if (!vocab) throw std::runtime_error("write failed: " + at("vocab.tsv"));

    save_pairs(ds.train_pairs, at("train.txt"));
    save_pairs(ds.valid_pairs, at("valid.txt"));
    save_pairs(ds.test_pairs, at("test.txt"));

    nlohmann::json j;
    j["clicks"] = ds.stats.clicks;
    j["sessions"] = ds.stats.sessions;
    j["items"] = ds.stats.items;
    j["avg_length"] = ds.stats.avg_length;
    j["max_length"] = ds.stats.max_length;
    j["train_pairs"] = ds.stats.train_pairs;
    j["valid_pairs"] = ds.stats.valid_pairs;
    j["test_pairs"] = ds.stats.test_pairs;
    j["test_threshold"] = ds.stats.test_threshold;
    std::ofstream stats(at("stats.json"));
    stats << j.dump(2) << '\n';
    if (!stats) throw std::runtime_error("write failed: " + at("stats.json"));
}

PreparedDataset load_prepared(const std::string& dir) {
    auto at = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };

    PreparedDataset ds;
    std::ifstream vocab(at("vocab.tsv"));
    if (!vocab) throw std::runtime_error("cannot open " + at("vocab.tsv"));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(vocab, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_tabs(line);
        std::int64_t idx;
        if (fields.size() != 2 || !parse_i64(fields[0], idx) || idx < 0)
            malformed(at("vocab.tsv"), line_no, "expected `index<TAB>item_id`");
        if (std::size_t(idx) != ds.vocab.size())
            malformed(at("vocab.tsv"), line_no, "indices must be contiguous from 0");
        ds.index[fields[1]] = ds.vocab.size();
        ds.vocab.push_back(fields[1]);
    }
    if (ds.vocab.empty()) throw std::runtime_error("empty vocabulary in " + dir);

    ds.train_pairs = load_pairs(at("train.txt"), ds.vocab.size());
    ds.valid_pairs = load_pairs(at("valid.txt"), ds.vocab.size());
    ds.test_pairs = load_pairs(at("test.txt"), ds.vocab.size());

    std::ifstream stats(at("stats.json"));
    if (!stats) throw std::runtime_error("cannot open " + at("stats.json"));
    nlohmann::json j = nlohmann::json::parse(stats);
    auto& st = ds.stats;
    st.clicks = j.value("clicks", 0ULL);
    st.sessions = j.value("sessions", 0ULL);
    st.items = j.value("items", 0ULL);
    st.avg_length = j.value("avg_length", 0.0);
    st.max_length = j.value("max_length", 0ULL);
    st.train_pairs = ds.train_pairs.size();
    st.valid_pairs = ds.valid_pairs.size();
    st.test_pairs = ds.test_pairs.size();
    st.test_threshold = j.value("test_threshold", 0LL);
    return ds;
}

}  // namespace disen
