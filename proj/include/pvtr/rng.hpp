#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace pvtr {

// SplitMix64 finalizer; full 64-bit avalanche.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Counter-based deterministic random stream.
///
/// A stream is identified by a (master_seed, label) pair; the label is folded
/// into the stream seed so independently labeled streams never share state.
/// Output is a pure function of (seed, counter), which makes every draw
/// reproducible across runs and platforms with IEEE-754 doubles.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string_view label)
        : seed_(derive_seed(master_seed, label)) {}

    /// Child stream; uses this stream's seed as the master for the new label.
    RngStream derive(std::string_view label) const { return RngStream(seed_, label); }

    std::uint64_t next_u64() {
        ++counter_;
        return mix64(seed_ + counter_ * 0x9E3779B97F4A7C15ull);
    }

    // Uniform in the open interval (0,1); endpoints are unreachable.
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n) via 128-bit multiply; bias < n / 2^64.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    static std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view label) {
        std::uint64_t h = mix64(master_seed ^ 0xA0761D6478BD642Full);
        for (unsigned char c : label) h = mix64(h ^ c);
        return h;
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace pvtr
