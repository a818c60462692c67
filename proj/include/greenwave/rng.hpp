#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace greenwave {

/// Seeded random stream. All randomness in the library flows through this
/// class so that runs are reproducible bit-for-bit from a single seed;
/// distributions are implemented here rather than via std:: distribution
/// objects, whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1).
    double uniform() {
        return (next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], inclusive. Rejection-free Lemire-style
    /// reduction is overkill at our scale; modulo bias over a 64-bit source
    /// is below 2^-50 for any range we use.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Box-Muller, one variate per call (the sine branch is discarded so the
    /// stream stays a pure function of call order).
    double normal(double mean, double stddev) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    /// Derive an independent stream; used to give subsystems their own
    /// sequences that do not shift when an unrelated consumer draws more.
    Rng fork(std::uint64_t stream) {
        return Rng(mix(gen_() ^ (0x9e3779b97f4a7c15ULL * (stream + 1))));
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 gen_;
};

}  // namespace greenwave
