#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace pi {

/// SplitMix64 finalizer. Used to derive independent per-record and
/// per-stream seeds from a master seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

/// Deterministic generator: the 64-bit Mersenne Twister (std::mt19937_64),
/// whose output sequence is fixed by the C++ standard, with all real-valued
/// draws derived here from raw 64-bit words so that results do not depend on
/// the standard library's distribution implementations.
class Rng {
public:
    static constexpr const char* algorithm = "mt19937_64";

    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t n);

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (cosine branch only, no cached spare).
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Normal(0, stddev) redrawn until |x| <= bound * stddev.
    double truncated_normal(double stddev, double bound = 2.0);

    /// Serialized engine state (textual, as defined by the standard).
    std::string state() const;
    void restore(std::uint64_t seed, const std::string& state);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace pi
