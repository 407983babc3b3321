#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ramit {

// Deterministic 64-bit generator: xorshift64* seeded through splitmix64.
// The stream depends only on (seed, stream name, step), never on platform
// state, so runs are bit-reproducible everywhere. Streams can be derived
// per step index, which lets data loading run ahead of the optimizer
// without changing the draw sequence.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix(seed ^ 0x9e3779b97f4a7c15ull)) {
        if (state_ == 0) state_ = 0x6a09e667f3bcc909ull;
    }

    Rng(std::uint64_t seed, std::string_view stream, std::uint64_t step = 0)
        : Rng(splitmix(seed) ^ splitmix(fnv1a(stream)) ^ splitmix(step * 0xbf58476d1ce4e5b9ull)) {}

    std::uint64_t next_u64() {
        // xorshift64* (Vigna 2016)
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dull;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller. Both uniforms are always drawn and one
    // variate is returned, so the stream position is independent of call
    // patterns.
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Normal(0, sigma) truncated to [-2 sigma, 2 sigma] by resampling.
    double truncated_normal(double sigma) {
        for (;;) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * sigma;
        }
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

private:
    std::uint64_t state_;
};

}  // namespace ramit
