#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace transport {

//! SplitMix64 output function (Steele, Lea & Flood 2014). Used both as a
//! seed expander and as the 64-bit mixing function for stream derivation.
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept
{
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/*!
 * Derive a child seed from (parent, index).
 *
 *   mix_seed(s, i) = splitmix64(s ^ splitmix64(i))
 *
 * This is the documented seed mixer for every stream in the library:
 * per-record simulation streams, per-replication seeds and bootstrap
 * resamples. It depends only on its arguments, so any schedule of work
 * reproduces the same draws.
 */
constexpr std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t index) noexcept
{
    return splitmix64(parent ^ splitmix64(index));
}

//! Disjoint stream tags; a stream is mix_seed(seed, tag) then per-item index.
enum class Stream : std::uint64_t
{
    population = 1,
    sampling = 2,
    oracle = 3,
    oracle_crude = 4,
    bootstrap = 5,
    replication = 6,
};

constexpr std::uint64_t stream_seed(std::uint64_t seed, Stream tag) noexcept
{
    return mix_seed(seed, static_cast<std::uint64_t>(tag));
}

constexpr std::uint64_t item_seed(std::uint64_t seed, Stream tag, std::uint64_t index) noexcept
{
    return mix_seed(stream_seed(seed, tag), index);
}

/*!
 * xoshiro256** 1.0 (Blackman & Vigna), state filled from SplitMix64.
 *
 * Satisfies UniformRandomBitGenerator so the standard distributions can
 * be used with it.
 */
class Xoshiro256
{
  public:
    using result_type = std::uint64_t;

    explicit constexpr Xoshiro256(std::uint64_t seed) noexcept
    {
        std::uint64_t z = seed;
        for (auto& word : state_)
        {
            word = splitmix64(z);
            z += 0x9E3779B97F4A7C15ULL;
        }
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept
    {
        return std::numeric_limits<result_type>::max();
    }

    constexpr result_type operator()() noexcept
    {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    //! Uniform double in [0, 1) from the top 53 bits.
    constexpr double uniform() noexcept
    {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

  private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept
    {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
};

} // namespace transport
