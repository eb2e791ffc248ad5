#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ipd {

/// Seedable generator with platform-independent draws.
///
/// std::mt19937_64 output is fully specified by the standard, but the
/// distributions are not, so uniforms and normals are derived here by hand.
/// Every call to next() is counted so that a run can be replayed exactly.
class Rng
{
public:
    explicit Rng(std::uint64_t seed = 1) : engine_(seed), seed_(seed) {}

    std::uint64_t next()
    {
        ++draws_;
        return engine_();
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
    std::size_t index(std::size_t n)
    {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t v = next();
        while (v >= limit) v = next();
        return static_cast<std::size_t>(v % bound);
    }

    /// Standard normal via Box-Muller (one value per pair of uniforms).
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t draws() const noexcept { return draws_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    std::uint64_t draws_ = 0;
};

} // namespace ipd
