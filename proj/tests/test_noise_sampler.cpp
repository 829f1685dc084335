#include "snls/noise_sampler.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace snls;

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
using C = Philox4x32::Counter;
}  // namespace

// Known-answer vectors of the Random123 reference implementation.
TEST(Philox, KnownAnswers) {
    EXPECT_EQ(Philox4x32::generate({0, 0, 0, 0}, {0, 0}), (C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
    EXPECT_EQ(Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}),
              (C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
    EXPECT_EQ(Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}),
              (C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Uniform, OpenAtZeroClosedAtOne) {
    EXPECT_GT(to_unit_open0(0), 0.0);
    EXPECT_EQ(to_unit_open0(~std::uint64_t{0}), 1.0);
}

TEST(NoiseStream, RejectsNonPositiveStep) {
    EXPECT_THROW(NoiseStream(1, 0, SpectralGrid(1, 1.0, 8), 0.0), DomainError);
}

TEST(NoiseStream, ReproducibleAndAddressable) {
    const SpectralGrid g(2, kTwoPi, 8);
    NoiseStream a(42, 3, g, 0.01), b(42, 3, g, 0.01);
    Field late(g, Space::physical);
    a.fill(late.values(), 999);
    for (int k = 0; k < 1000; ++k) {
        const Field fa = a.next_increment();
        const Field fb = b.next_increment();
        for (std::size_t i = 0; i < g.size(); ++i) ASSERT_EQ(fa[i], fb[i]);
        if (k == 999)
            for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(fa[i], late[i]);
    }
}

TEST(NoiseStream, StreamsAndSeedsDiffer) {
    const SpectralGrid g(1, kTwoPi, 16);
    NoiseStream a(42, 0, g, 0.01), b(42, 1, g, 0.01), c(43, 0, g, 0.01);
    const Field fa = a.next_increment(), fb = b.next_increment(), fc = c.next_increment();
    int same_b = 0, same_c = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        same_b += fa[i] == fb[i];
        same_c += fa[i] == fc[i];
    }
    EXPECT_EQ(same_b, 0);
    EXPECT_EQ(same_c, 0);
}

TEST(NoiseStream, CellMomentsMatchWhiteNoiseScaling) {
    const SpectralGrid g(1, 3.0, 4);
    const double dt = 0.02;
    NoiseStream s(7, 0, g, dt);
    const int M = 100000;
    double sum = 0.0, sq = 0.0;
    for (int k = 0; k < M; ++k) {
        const Field f = s.next_increment();
        sum += f[1].real();
        sq += f[1].real() * f[1].real();
        ASSERT_EQ(f[1].imag(), 0.0);
    }
    const double var = dt / g.cell_volume();
    EXPECT_LT(std::abs(sum / M), 4.0 * std::sqrt(var / M));
    EXPECT_NEAR(sq / M / var, 1.0, 4.0 * std::sqrt(2.0 / M));
}

TEST(NoiseStream, TestFunctionPairingHasVarianceDtTimesL2Norm) {
    const SpectralGrid g(1, kTwoPi, 32);
    const double dt = 0.01;
    std::vector<double> f(g.size());
    double fl2 = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) {
        const double x = j * g.spacing();
        f[j] = std::cos(x) + 0.5 * std::sin(3.0 * x);
        fl2 += f[j] * f[j] * g.cell_volume();
    }
    NoiseStream s(11, 0, g, dt);
    const int M = 20000;
    double sq = 0.0;
    for (int k = 0; k < M; ++k) {
        const Field w = s.next_increment();
        double p = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) p += w[j].real() * f[j] * g.cell_volume();
        sq += p * p;
    }
    EXPECT_NEAR(sq / M / (dt * fl2), 1.0, 0.05);
}

TEST(NoiseStream, FrequencyDataIsHermitian) {
    const SpectralGrid g(2, kTwoPi, 16);
    NoiseStream s(5, 0, g, 0.1);
    const Field F = s.next_increment_frequency();
    for (std::size_t i = 0; i < g.size(); ++i) {
        auto k = g.wavevector(i);
        for (auto& c : k) c = -c;
        EXPECT_NEAR(std::abs(F[i] - std::conj(F[g.index_of_wavevector(k)])), 0.0, 1e-12);
    }
}

TEST(ModeVariance, ClosedForm) {
    const SpectralGrid g(2, 3.0, 8);
    EXPECT_DOUBLE_EQ(mode_increment_variance(g, 0.1), 0.1 * 9.0);
    EXPECT_DOUBLE_EQ(mode_increment_variance(g, 0.2), 2.0 * mode_increment_variance(g, 0.1));
    EXPECT_EQ(mode_increment_variance(g, 0.0), 0.0);
}

TEST(ModeVariance, EmpiricalAcrossModesAndNoCrossCorrelation) {
    const SpectralGrid g(1, kTwoPi, 16);
    const double dt = 0.05;
    NoiseStream s(13, 0, g, dt);
    const int M = 20000;
    const std::size_t modes[] = {0, 1, 5, 8};
    double var[4] = {0, 0, 0, 0};
    cplx cross{0.0, 0.0};
    for (int k = 0; k < M; ++k) {
        const Field F = s.next_increment_frequency();
        for (int j = 0; j < 4; ++j) var[j] += std::norm(F[modes[j]]);
        cross += F[1] * std::conj(F[5]);
    }
    const double v0 = mode_increment_variance(g, dt);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(var[j] / M / v0, 1.0, 0.05) << modes[j];
    EXPECT_LT(std::abs(cross) / M / v0, 5.0 / std::sqrt(double(M)));
}
