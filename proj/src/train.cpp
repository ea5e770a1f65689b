#include "disen/train.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace disen {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'D', 'S', 'G', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const std::vector<unsigned char>& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << v;
    return os.str();
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

std::uint32_t get_u32(const std::vector<unsigned char>& in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[at + i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const std::vector<unsigned char>& in, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(in[at + i]) << (8 * i);
    return v;
}

void put_f32(std::vector<unsigned char>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void put_f64(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

float get_f32(const std::vector<unsigned char>& in, std::size_t at) {
    std::uint32_t bits = get_u32(in, at);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

double get_f64(const std::vector<unsigned char>& in, std::size_t at) {
    std::uint64_t bits = get_u64(in, at);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

json config_to_json(const ModelConfig& c) {
    return json{{"n_items", c.n_items},
                {"d", c.d},
                {"K", c.K},
                {"T", c.T},
                {"L", c.L},
                {"lambda", c.lambda},
                {"dropout", c.dropout},
                {"use_factor_similarity", c.use_factor_similarity},
                {"use_residual_attention", c.use_residual_attention},
                {"share_ggnn_across_factors", c.share_ggnn_across_factors},
                {"share_attention_across_factors", c.share_attention_across_factors}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.n_items = j.at("n_items").get<std::size_t>();
    c.d = j.at("d").get<std::size_t>();
    c.K = j.at("K").get<std::size_t>();
    c.T = j.at("T").get<std::size_t>();
    c.L = j.at("L").get<std::size_t>();
    c.lambda = j.at("lambda").get<double>();
    c.dropout = j.at("dropout").get<double>();
    c.use_factor_similarity = j.at("use_factor_similarity").get<bool>();
    c.use_residual_attention = j.at("use_residual_attention").get<bool>();
    c.share_ggnn_across_factors = j.at("share_ggnn_across_factors").get<bool>();
    c.share_attention_across_factors = j.at("share_attention_across_factors").get<bool>();
    return c;
}

[[noreturn]] void integrity_error(const std::string& path, const std::string& why) {
    throw std::runtime_error("checkpoint: " + path + ": " + why + " (integrity check failed)");
}

std::string trim_number(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    // Payload: parameter tensors as f32, then optimizer moments as f64, all
    // row-major little-endian in manifest order.
    std::vector<unsigned char> payload;
    json tensors = json::array();
    for (const auto& [name, t] : c.tensors) {
        json entry{{"name", name},
                   {"shape", t.shape},
                   {"dtype", "f32"},
                   {"offset", payload.size()},
                   {"count", t.numel()}};
        tensors.push_back(entry);
        for (float v : t.data) put_f32(payload, v);
    }
    json opt_tensors = json::array();
    auto put_moments = [&](const char* prefix, const std::vector<Tensor<double>>& moments) {
        for (std::size_t i = 0; i < moments.size(); ++i) {
            opt_tensors.push_back(json{{"name", std::string(prefix) + c.tensors[i].first},
                                       {"shape", moments[i].shape},
                                       {"dtype", "f64"},
                                       {"offset", payload.size()},
                                       {"count", moments[i].numel()}});
            for (double v : moments[i].data) put_f64(payload, v);
        }
    };
    if (c.adam_steps > 0) {
        if (c.adam_m.size() != c.tensors.size() || c.adam_u.size() != c.tensors.size())
            throw std::invalid_argument("checkpoint: optimizer state does not cover every tensor");
        put_moments("m.", c.adam_m);
        put_moments("u.", c.adam_u);
    }

    json header{{"version", kVersion},
                {"config", config_to_json(c.config)},
                {"vocab", c.vocab},
                {"tensors", tensors},
                {"optimizer", json{{"steps", c.adam_steps}, {"tensors", opt_tensors}}},
                {"epoch", c.epoch},
                {"best_epoch", c.best_epoch},
                {"best_mrr", c.best_mrr},
                {"payload_bytes", payload.size()},
                {"payload_hash", hex64(fnv1a(payload))}};
    std::string header_str = header.dump();

    std::vector<unsigned char> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, kVersion);
    put_u64(out, header_str.size());
    out.insert(out.end(), header_str.begin(), header_str.end());
    out.insert(out.end(), payload.begin(), payload.end());

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("checkpoint: cannot write " + tmp);
        f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
        if (!f) throw std::runtime_error("checkpoint: short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());

    if (bytes.size() < 20) integrity_error(path, "file shorter than the fixed header");
    if (std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: " + path + ": bad magic bytes, not a checkpoint");
    std::uint32_t version = get_u32(bytes, 8);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: " + path + ": format version " +
                                 std::to_string(version) + " unsupported, expected " +
                                 std::to_string(kVersion));
    std::uint64_t header_len = get_u64(bytes, 12);
    if (20 + header_len > bytes.size()) integrity_error(path, "truncated header");

    json header;
    try {
        header = json::parse(bytes.begin() + 20, bytes.begin() + 20 + std::ptrdiff_t(header_len));
    } catch (const json::exception& e) {
        integrity_error(path, std::string("unparseable header: ") + e.what());
    }

    std::size_t payload_at = 20 + header_len;
    std::vector<unsigned char> payload(bytes.begin() + std::ptrdiff_t(payload_at), bytes.end());
    std::uint64_t expect_bytes = header.at("payload_bytes").get<std::uint64_t>();
    if (payload.size() != expect_bytes) integrity_error(path, "truncated payload");
    if (hex64(fnv1a(payload)) != header.at("payload_hash").get<std::string>())
        integrity_error(path, "payload hash mismatch");

    Checkpoint c;
    c.config = config_from_json(header.at("config"));
    c.vocab = header.at("vocab").get<std::vector<std::string>>();
    c.epoch = header.at("epoch").get<std::size_t>();
    c.best_epoch = header.at("best_epoch").get<std::size_t>();
    c.best_mrr = header.at("best_mrr").get<double>();

    auto manifest = param_manifest(c.config);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != manifest.size())
        throw std::runtime_error("checkpoint: " + path + ": holds " +
                                 std::to_string(tensors.size()) + " tensors, config needs " +
                                 std::to_string(manifest.size()));
    auto read_tensor = [&](const json& entry, const std::string& want_name, const Shape& want_shape,
                           std::size_t elem_size, const char* dtype) {
        if (entry.at("name").get<std::string>() != want_name)
            throw std::runtime_error("checkpoint: " + path + ": tensor '" +
                                     entry.at("name").get<std::string>() + "' out of order, expected '" +
                                     want_name + "'");
        auto shape = entry.at("shape").get<Shape>();
        if (shape != want_shape)
            throw std::runtime_error("checkpoint: " + path + ": tensor '" + want_name +
                                     "' has shape " + shape_str(shape) + ", config expects " +
                                     shape_str(want_shape));
        if (entry.at("dtype").get<std::string>() != dtype)
            integrity_error(path, "unexpected dtype for " + want_name);
        std::size_t offset = entry.at("offset").get<std::size_t>();
        std::size_t count = entry.at("count").get<std::size_t>();
        if (count != shape_numel(shape)) integrity_error(path, "count/shape mismatch for " + want_name);
        if (offset + count * elem_size > payload.size())
            integrity_error(path, "tensor data out of range for " + want_name);
        return std::pair<std::size_t, std::size_t>{offset, count};
    };

    for (std::size_t i = 0; i < manifest.size(); ++i) {
        auto [offset, count] =
            read_tensor(tensors.at(i), manifest[i].first, manifest[i].second, 4, "f32");
        Tensor<float> t(manifest[i].second);
        for (std::size_t j = 0; j < count; ++j) t.data[j] = get_f32(payload, offset + 4 * j);
        c.tensors.emplace_back(manifest[i].first, std::move(t));
    }

    const auto& opt = header.at("optimizer");
    c.adam_steps = opt.at("steps").get<std::uint64_t>();
    if (c.adam_steps > 0) {
        const auto& ot = opt.at("tensors");
        if (ot.size() != 2 * manifest.size())
            integrity_error(path, "optimizer state does not cover every tensor");
        auto read_moments = [&](const char* prefix, std::size_t base) {
            std::vector<Tensor<double>> ms;
            for (std::size_t i = 0; i < manifest.size(); ++i) {
                auto [offset, count] =
                    read_tensor(ot.at(base + i), prefix + manifest[i].first, manifest[i].second,
                                8, "f64");
                Tensor<double> t(manifest[i].second);
                for (std::size_t j = 0; j < count; ++j) t.data[j] = get_f64(payload, offset + 8 * j);
                ms.push_back(std::move(t));
            }
            return ms;
        };
        c.adam_m = read_moments("m.", 0);
        c.adam_u = read_moments("u.", manifest.size());
    }
    return c;
}

namespace detail {

std::string epoch_stats_json(const EpochStats& s, std::size_t k) {
    json j{{"epoch", s.epoch},          {"lr", s.lr},
           {"train_loss", s.train_loss}, {"dec_loss", s.dec_loss},
           {"valid_p", s.valid_p},       {"valid_mrr", s.valid_mrr},
           {"k", k},                     {"wall_time_s", s.wall_time_s}};
    return j.dump();
}

}  // namespace detail

namespace {

std::string fixed6(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

}  // namespace

std::string sweep_to_tsv(const SweepTable& t) {
    std::ostringstream os;
    os << "axis\tvalue\tsplit\tp_at_k\tmrr_at_k\tn_evaluated\tstatus\n";
    for (const auto& r : t.rows) {
        os << t.axis << '\t' << trim_number(r.value) << '\t';
        if (r.skipped)
            os << "-\t-\t-\t-\tskipped: " << r.note << '\n';
        else
            os << r.note << '\t' << fixed6(r.metrics.precision_at_k) << '\t'
               << fixed6(r.metrics.mrr_at_k) << '\t' << r.metrics.n_evaluated << "\tok\n";
    }
    return os.str();
}

std::string sweep_to_text(const SweepTable& t) {
    std::ostringstream os;
    os << std::left << std::setw(10) << t.axis << std::setw(12) << "P@k" << std::setw(12)
       << "MRR@k" << std::setw(8) << "n"
       << "status\n";
    for (const auto& r : t.rows) {
        os << std::left << std::setw(10) << trim_number(r.value);
        if (r.skipped) {
            os << "skipped: " << r.note << '\n';
            continue;
        }
        os << std::setw(12) << fixed6(r.metrics.precision_at_k) << std::setw(12)
           << fixed6(r.metrics.mrr_at_k) << std::setw(8) << r.metrics.n_evaluated << r.note
           << '\n';
    }
    return os.str();
}

}  // namespace disen
