#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace npsa {

// Error taxonomy; the CLI maps these onto exit codes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr double kEulerMascheroni = 0.5772156649015328606;

// splitmix64: the mixing stage doubles as a seed-derivation hash so every
// stream (task, noise, init) is a pure function of the ingredients fed in.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_mix(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    return splitmix64(s);
}

inline uint64_t derive_seed(uint64_t root, std::string_view stream, uint64_t index = 0) {
    uint64_t h = root;
    for (char c : stream) h = hash_mix(h, static_cast<uint64_t>(static_cast<unsigned char>(c)));
    return hash_mix(h, index);
}

// Deterministic RNG with platform-independent uniform/normal/exponential
// draws (no std::*_distribution, whose outputs are implementation-defined).
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // strictly inside (0,1)
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, no cached spare: two uniforms per draw, draw order stable.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

    // integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

  private:
    uint64_t state_;
};

// Sum that is invariant to the input order: the addends are sorted by value
// before accumulation, so any permutation of the same multiset produces the
// bit-identical result. Used on every reduction across context points.
inline double stable_sum(std::span<const double> xs) {
    if (xs.size() <= 2) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    std::vector<double> sorted(xs.begin(), xs.end());
    std::sort(sorted.begin(), sorted.end());
    double s = 0.0;
    for (double x : sorted) s += x;
    return s;
}

inline double stable_mean(std::span<const double> xs) {
    if (xs.empty()) throw ShapeError("stable_mean: empty input");
    return stable_sum(xs) / static_cast<double>(xs.size());
}

inline int env_thread_cap() {
    const char* v = std::getenv("NP_THREADS");
    if (v == nullptr) return 1;
    int n = std::atoi(v);
    return n < 1 ? 1 : n;
}

}  // namespace npsa
