#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <utility>

namespace latta {

/// splitmix64, used only to expand a 64-bit seed into generator state.
class SplitMix64 {
public:
    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

/// xoshiro256** (Blackman & Vigna) with its own uniform and normal helpers.
class Xoshiro256ss {
public:
    using result_type = std::uint64_t;

    explicit Xoshiro256ss(std::uint64_t seed = 0) noexcept;

    /// Independent stream for (master seed, stream id). Used to give every
    /// run, image and adapter its own substream.
    static Xoshiro256ss for_stream(std::uint64_t seed, std::uint64_t stream) noexcept;
    static Xoshiro256ss for_stream(std::uint64_t seed, std::string_view label) noexcept;

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept { return next(); }
    result_type next() noexcept;

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) noexcept;
    /// Uniform integer in [0, bound); bound must be > 0.
    std::uint64_t below(std::uint64_t bound) noexcept;
    /// One Box-Muller pair of independent standard normals.
    std::pair<double, double> normal_pair() noexcept;

    const std::array<std::uint64_t, 4>& state() const noexcept { return s_; }
    bool operator==(const Xoshiro256ss&) const = default;

private:
    std::array<std::uint64_t, 4> s_{};
};

/// Stable 64-bit FNV-1a hash, used for stream labels and config hashes.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace latta
