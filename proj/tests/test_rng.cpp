#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gnsse/rng.hpp"

using namespace gnsse;

// Known-answer vectors for Philox4x32-10 from the Random123 distribution.
TEST(Philox, KnownAnswerZero)
{
    const auto out = Philox4x32::bijection({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out[0], 0x6627e8d5u);
    EXPECT_EQ(out[1], 0xe169c58du);
    EXPECT_EQ(out[2], 0xbc57ac4cu);
    EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerOnes)
{
    const auto out = Philox4x32::bijection({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                           {0xffffffffu, 0xffffffffu});
    EXPECT_EQ(out[0], 0x408f276du);
    EXPECT_EQ(out[1], 0x41c83b0eu);
    EXPECT_EQ(out[2], 0xa20bc7c6u);
    EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(Philox, KnownAnswerPi)
{
    const auto out = Philox4x32::bijection({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                           {0xa4093822u, 0x299f31d0u});
    EXPECT_EQ(out[0], 0xd16cfe09u);
    EXPECT_EQ(out[1], 0x94fdccebu);
    EXPECT_EQ(out[2], 0x5001e420u);
    EXPECT_EQ(out[3], 0x24126ea1u);
}

TEST(RngStream, SameKeySameSequence)
{
    const StreamKey k{42, StreamPurpose::NoiseX, 3, 17, 0};
    RngStream a(k), b(k);
    for (int i = 0; i < 1000; ++i)
        ASSERT_EQ(a(), b());
}

TEST(RngStream, DifferentAddressesGiveDifferentStreams)
{
    std::set<std::uint32_t> firsts;
    for (std::uint64_t traj = 0; traj < 8; ++traj)
        for (std::uint32_t cont = 0; cont < 4; ++cont)
            for (auto purpose : {StreamPurpose::NoiseX, StreamPurpose::NoiseY})
                for (std::uint32_t sub : {0u, 1u, 0xFFFFu}) {
                    RngStream r(StreamKey{7, purpose, sub, traj, cont});
                    firsts.insert(r());
                }
    EXPECT_EQ(firsts.size(), 8u * 4u * 2u * 3u);
    RngStream s1(StreamKey{1, StreamPurpose::NoiseX, 0, 0, 0});
    RngStream s2(StreamKey{2, StreamPurpose::NoiseX, 0, 0, 0});
    EXPECT_NE(s1(), s2());
}

TEST(RngStream, NormalMoments)
{
    RngStream r(StreamKey{2026, StreamPurpose::Generic, 0, 0, 0});
    const int n = 200000;
    double s = 0, s2 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        s += v;
        s2 += v * v;
        s4 += v * v * v * v;
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    // Five standard errors on each moment.
    EXPECT_NEAR(mean, 0.0, 5.0 / std::sqrt(n));
    EXPECT_NEAR(var, 1.0, 5.0 * std::sqrt(2.0 / n));
    EXPECT_NEAR(s4 / n, 3.0, 5.0 * std::sqrt(96.0 / n));
}

TEST(RngStream, UniformBitsAreBalanced)
{
    RngStream r(StreamKey{5, StreamPurpose::Probe, 0, 0, 0});
    const int n = 100000;
    int ones[32] = {};
    for (int i = 0; i < n; ++i) {
        const auto v = r();
        for (int b = 0; b < 32; ++b)
            ones[b] += (v >> b) & 1u;
    }
    for (int b = 0; b < 32; ++b)
        EXPECT_NEAR(ones[b] / double(n), 0.5, 5.0 * 0.5 / std::sqrt(n));
}
