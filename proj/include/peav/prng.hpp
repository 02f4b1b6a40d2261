#pragma once

#include <cmath>
#include <cstdint>

namespace peav {

/// Counter-based pseudo-random stream.
///
/// Each draw is a pure function of (seed, counter), so identical state
/// yields identical sequences on every platform, and sub-streams derived
/// from a key are independent of how the parent stream is consumed.
/// The mixing function is the splitmix64 finalizer over
/// seed + (counter+1) * golden-ratio increment.
class PrngStream {
public:
    explicit PrngStream(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        ++counter_;
        return mix64(seed_ + counter_ * kGolden);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t next_index(std::uint64_t n) {
        return next_u64() % n;
    }

    /// Standard normal via Box-Muller; always consumes exactly two draws.
    double next_gaussian() {
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    /// Independent stream keyed by `key`; splitting does not disturb the
    /// parent counter.
    PrngStream substream(std::uint64_t key) const {
        return PrngStream(mix64(seed_ ^ mix64(key + kGolden)));
    }

private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
    static constexpr double kPi = 3.141592653589793238462643383279502884;

    static std::uint64_t mix64(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t seed_;
    std::uint64_t counter_;
};

/// Stable 64-bit key for strings, used to derive sub-streams from ids.
inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace peav
