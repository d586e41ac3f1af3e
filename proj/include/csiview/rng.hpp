#pragma once

// Counter-based random number generation. Every random draw in the project
// is a pure function of a 64-bit key tuple, so dataset generation can be
// reordered or parallelised without changing a single bit of output.
//
// The core is the SplitMix64 finalizer applied to a running hash of the
// key words. It passes the usual avalanche sanity checks and is more than
// good enough for simulation noise and weight init.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace csiview::rng {

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t w) {
    return mix64(h ^ (w + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

// Hash an arbitrary-length key tuple down to one word.
template <typename... Words>
std::uint64_t key(std::uint64_t first, Words... rest) {
    std::uint64_t h = mix64(first);
    ((h = hash_combine(h, static_cast<std::uint64_t>(rest))), ...);
    return h;
}

// Uniform in [0, 1). 53 mantissa bits.
inline double uniform01(std::uint64_t k) {
    return static_cast<double>(mix64(k) >> 11) * 0x1.0p-53;
}

inline double uniform(std::uint64_t k, double lo, double hi) {
    return lo + (hi - lo) * uniform01(k);
}

// Pair of independent standard normals via Box-Muller; u1 is kept away
// from zero so the log is finite.
inline void gaussian_pair(std::uint64_t k, double& g0, double& g1) {
    const double u1 = (static_cast<double>(mix64(k) >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform01(mix64(k ^ 0xd1b54a32d192ed03ULL));
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    g0 = r * std::cos(th);
    g1 = r * std::sin(th);
}

// Sequential generator for places that want a stream (weight init, shuffles).
// Still counter-based underneath: state is just an incrementing counter.
class Stream {
public:
    explicit Stream(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() { return mix64(key(seed_, counter_++)); }
    double next_uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform01(); }

    // Fisher-Yates; deterministic in the seed.
    template <typename Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace csiview::rng
