#include "pi/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "pi/error.hpp"

namespace pi {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t Rng::below(std::uint64_t n) {
    require(n > 0, ErrorKind::contract, "Rng::below requires n > 0");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) {
        x = engine_();
    }
    return x % n;
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double stddev, double bound) {
    for (;;) {
        const double z = normal();
        if (std::abs(z) <= bound) {
            return z * stddev;
        }
    }
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::restore(std::uint64_t seed, const std::string& state) {
    std::istringstream is(state);
    std::mt19937_64 engine;
    is >> engine;
    require(!is.fail(), ErrorKind::format, "unreadable rng state");
    seed_ = seed;
    engine_ = engine;
}

}  // namespace pi
