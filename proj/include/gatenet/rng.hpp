#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace gatenet {

// Deterministic random source. Distributions are hand-rolled on top of
// mt19937_64 because the std:: distribution implementations are not pinned
// by the standard, and reproducibility across toolchains is part of the
// library contract.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on [0, 1) with 53 bits of mantissa.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Box-Muller; consumes exactly two uniforms per call, no caching, so a
    // call sequence is reproducible regardless of interleaving.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) {
        return mean + stddev * normal();
    }

private:
    std::mt19937_64 gen_;
};

// FNV-1a, used for stable name-derived seeds and id bucketing.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Seed for a named parameter: independent of every other parameter's stream,
// so adding or removing one parameter never shifts the init of the rest.
inline std::uint64_t param_seed(std::uint64_t global_seed, std::string_view name) {
    return fnv1a64(name) ^ (global_seed * 0x9e3779b97f4a7c15ull + 0x243f6a8885a308d3ull);
}

} // namespace gatenet
