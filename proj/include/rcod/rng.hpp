#pragma once

#include <cmath>
#include <cstdint>

namespace rcod {

// Deterministic PRNG used everywhere randomness is needed. splitmix64 core
// with Box-Muller normals; self-contained so results are identical across
// standard-library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi].
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on the inclusive range [lo, hi], rejection-sampled so
    // every value has exactly equal probability.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t range = uint64_t(hi - lo) + 1;
        if (range == 0) return lo;  // full 64-bit span
        uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return lo + int64_t(x % range);
    }

    // Standard normal via Box-Muller. Uses two uniforms per draw; no cached
    // spare, so the stream position is a pure function of the draw count.
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    uint64_t state_;
};

// Stable seed derivation for per-item streams (corpus items, batch samples).
inline uint64_t derive_seed(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t a, uint64_t b, uint64_t c) {
    return derive_seed(derive_seed(a, b), c);
}

}  // namespace rcod
