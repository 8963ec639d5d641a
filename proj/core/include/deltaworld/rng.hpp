#pragma once

#include <cmath>
#include <cstdint>

namespace dw {

// Deterministic generator with a fully specified algorithm (splitmix64 core),
// so streams are bit-identical across platforms and standard library versions.
// std::normal_distribution et al. are implementation-defined and unusable here.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97f4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1) with 53-bit resolution
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Box-Muller, no cached spare: one draw consumes two uniforms.
    double normal(double mu = 0.0, double sigma = 1.0) {
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        return mu + sigma * r * std::cos(6.283185307179586 * u2);
    }

    // normal truncated to +-clip*sigma by rejection
    double trunc_normal(double sigma, double clip = 2.0) {
        for (;;) {
            double x = normal(0.0, sigma);
            if (std::abs(x) <= clip * sigma) return x;
        }
    }

    bool bernoulli(double p) { return uniform01() < p; }

private:
    uint64_t state_;
};

// Order-sensitive seed mixing for derived streams (per trajectory, per step, ...).
inline uint64_t hash_mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9E3779B97f4A7C15ULL + (b * 0xBF58476D1CE4E5B9ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_mix(uint64_t a, uint64_t b, uint64_t c) { return hash_mix(hash_mix(a, b), c); }

}  // namespace dw
