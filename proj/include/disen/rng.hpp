#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "disen/tensor.hpp"

namespace disen {

// Deterministic 64-bit generator (splitmix64 stream). The standard library
// distributions are not pinned across implementations, so uniform and normal
// draws are derived here explicitly; identical seeds give identical sequences
// on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller, one cached value per pair.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

inline std::uint64_t mix_u64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derive an independent named stream from a root seed. All randomness in a
/// run flows from one seed through these substreams so that components
/// (init, shuffle, dropout, synth) can be varied independently; the optional
/// index separates per-epoch streams.
inline Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return Rng(mix_u64(seed ^ mix_u64(h) ^ mix_u64(index * 0x9E3779B97F4A7C15ULL + 1)));
}

/// I.i.d. normal(0, stddev) entries, computed in double then cast.
template <class Real>
Tensor<Real> gaussian_init(Shape shape, Rng& rng, double stddev = 0.1) {
    if (shape.empty()) throw std::invalid_argument("gaussian_init: shape must be nonempty");
    Tensor<Real> t(std::move(shape));
    for (auto& x : t.data) x = static_cast<Real>(rng.normal(0.0, stddev));
    return t;
}

}  // namespace disen
