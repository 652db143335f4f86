#pragma once

// Counter-based random streams. Every random draw in the library comes from
// a Philox4x32-10 stream addressed by (master seed, purpose, trajectory,
// sub-index), so results do not depend on the order in which trajectories
// are executed.

#include <array>
#include <cstdint>
#include <limits>
#include <random>

namespace gnsse {

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
class Philox4x32 {
public:
    using ctr_type = std::array<std::uint32_t, 4>;
    using key_type = std::array<std::uint32_t, 2>;

    static ctr_type bijection(ctr_type ctr, key_type key)
    {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kW0;
                key[1] += kW1;
            }
            const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;
};

/// Purposes of the random streams. Values are part of the reproducibility
/// contract; append only.
enum class StreamPurpose : std::uint32_t {
    NoiseX = 1,
    NoiseY = 2,
    Continuation = 3,
    Probe = 4,
    Generic = 5,
};

struct StreamKey {
    std::uint64_t master_seed = 0;
    StreamPurpose purpose = StreamPurpose::Generic;
    std::uint32_t subpurpose = 0;       ///< e.g. kernel index within a component
    std::uint64_t trajectory = 0;
    std::uint32_t continuation = 0;     ///< 0 = unconditional sample
};

/// Uniform random bit generator over one Philox stream. Word 0 of the
/// counter is the block counter, the remaining words carry the stream
/// address; 2^32 blocks of four words are available per stream.
class RngStream {
public:
    using result_type = std::uint32_t;

    explicit RngStream(const StreamKey& k)
    {
        key_ = {static_cast<std::uint32_t>(k.master_seed),
                static_cast<std::uint32_t>(k.master_seed >> 32)};
        const std::uint32_t tag = (static_cast<std::uint32_t>(k.purpose) << 24) ^ (k.subpurpose & 0xFFFFFFu);
        // Trajectory indices above 2^32 are folded into the purpose word.
        ctr_ = {0u, tag ^ static_cast<std::uint32_t>(k.trajectory >> 32) * 0x9E3779B9u,
                static_cast<std::uint32_t>(k.trajectory), k.continuation};
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        if (pos_ == 4) {
            block_ = Philox4x32::bijection(ctr_, key_);
            ++ctr_[0];
            pos_ = 0;
        }
        return block_[pos_++];
    }

    /// Standard normal deviate.
    double normal() { return normal_(*this); }

private:
    Philox4x32::key_type key_{};
    Philox4x32::ctr_type ctr_{};
    Philox4x32::ctr_type block_{};
    int pos_ = 4;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace gnsse
