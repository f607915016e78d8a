#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rpose {

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes: invalid_config / invalid_input
// -> 1, io_error / parse_error -> 2, numeric_error -> 3.
// ---------------------------------------------------------------------------

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct invalid_input : error {
    using error::error;
};

struct invalid_config : error {
    using error::error;
};

struct io_error : error {
    using error::error;
};

struct parse_error : error {
    parse_error(const std::string& file, std::size_t line, const std::string& what)
        : error(file + ":" + std::to_string(line) + ": " + what), line(line) {}
    std::size_t line = 0;
};

struct numeric_error : error {
    using error::error;
};

// ---------------------------------------------------------------------------
// Randomness. All randomness funnels through one master seed per command;
// consumers derive independent streams from (seed, tag) so the draw order of
// one consumer never perturbs another.
// ---------------------------------------------------------------------------

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the tag
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return splitmix64(base ^ h);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t base, std::string_view tag) {
    return Rng(derive_seed(base, tag));
}

// Distribution helpers with pinned, platform-independent output. The
// std::*_distribution classes are implementation-defined, so reproducible
// artifacts cannot use them.

inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

inline double gaussian(Rng& rng) {
    // Box-Muller; rejects the u=0 corner so log() stays finite.
    double u = 0.0;
    do {
        u = uniform01(rng);
    } while (u <= 0.0);
    const double v = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586476925286766559 * v);
}

// Uniform integer in [0, n) by rejection, bias-free.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = 0;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// Draws k distinct indices from [0, n) via a partial Fisher-Yates shuffle.
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
    if (k > n) throw invalid_input("sample_without_replacement: k > n");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

// ---------------------------------------------------------------------------
// Small vector helpers used by the optimizers and the meta loop.
// ---------------------------------------------------------------------------

inline void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw numeric_error(std::string(what) + " is not finite");
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> v) {
    return std::sqrt(dot(v, v));
}

}  // namespace rpose
