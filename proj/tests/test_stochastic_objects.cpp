#include "snls/stochastic_objects.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace snls;

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

PathConfig small_config(int d, double alpha, double n, double T = 0.25, int K = 16) {
    PathConfig c;
    c.params = make_params(d, alpha, kDefaultEps, std::nullopt, n);
    c.T = T;
    c.K = K;
    return c;
}

Field noise_frequency(NoiseStream& s) { return s.next_increment_frequency(); }
}  // namespace

TEST(Psi, StartsAtZeroAndStaysInTheBall) {
    const SpectralGrid g(2, kTwoPi, 16);
    const auto path = build_path(small_config(2, 0.9, 5.0), g, 1, 0);
    ASSERT_EQ(path.times.size(), 17u);
    for (auto z : path.psi.front().values()) EXPECT_EQ(z, cplx(0.0, 0.0));
    for (auto z : path.ipsi2.front().values()) EXPECT_EQ(z, cplx(0.0, 0.0));
    const auto xi2 = g.xi_squared();
    for (const auto& f : path.psi)
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!inside_ball(xi2[i], 5.0)) EXPECT_EQ(f[i], cplx(0.0, 0.0));
    EXPECT_DOUBLE_EQ(path.times.back(), 0.25);
}

TEST(Psi, RecursionAlgebraAgainstRecomputedMultipliers) {
    const SpectralGrid g(1, 5.0, 32);
    const double n = 9.0, alpha = 0.35, dt = 0.013;
    PathEngine e(g, n, alpha, dt, g);
    NoiseStream s(3, 0, g, dt);
    Field prev(g, Space::frequency);
    for (int k = 0; k < 20; ++k) {
        const Field G = noise_frequency(s);
        e.evolve_psi(G);
        const auto xi2 = g.xi_squared();
        for (std::size_t i = 0; i < g.size(); ++i) {
            cplx expect{0.0, 0.0};
            if (xi2[i] <= n * n)
                expect = std::exp(cplx(0.0, dt * xi2[i])) * prev[i] - cplx(0.0, 1.0) * G[i] / std::pow(1.0 + xi2[i], alpha / 2);
            EXPECT_NEAR(std::abs(e.psi()[i] - expect), 0.0, 1e-12 * (1.0 + std::abs(expect)));
        }
        const Field free = evolve_psi(prev, G, n, alpha, dt);
        for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(std::abs(free[i] - e.psi()[i]), 0.0, 1e-12);
        prev = e.psi();
    }
}

TEST(Psi, SingleModeVarianceIsExact) {
    const SpectralGrid g(1, kTwoPi, 16);
    const double n = 4.0, alpha = 0.3, T = 0.5;
    const int K = 8, M = 10000;
    const std::size_t idx = g.index_of_wavevector({2, 0, 0});
    double acc = 0.0;
    for (int m = 0; m < M; ++m) {
        PathEngine e(g, n, alpha, T / K, g);
        NoiseStream s(17, m, g, T / K);
        for (int k = 0; k < K; ++k) e.evolve_psi(noise_frequency(s));
        acc += std::norm(e.psi()[idx]);
    }
    const double expect = T * kTwoPi * std::pow(1.0 + 4.0, -alpha);
    EXPECT_NEAR(acc / M / expect, 1.0, 0.05);
}

TEST(Psi, ZeroRadiusKeepsOnlyTheMeanMode) {
    const SpectralGrid g(1, kTwoPi, 16);
    const auto path = build_path(small_config(1, 0.3, 0.0), g, 5, 0);
    const Field& last = path.psi.back();
    EXPECT_NE(last[0], cplx(0.0, 0.0));
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_EQ(last[i], cplx(0.0, 0.0));
}

TEST(Psi, CoupledTruncationsAreBitwiseNested) {
    const SpectralGrid g(2, kTwoPi, 32);
    const double dt = 0.01;
    std::vector<PathEngine> engines;
    engines.emplace_back(g, 4.0, 0.9, dt, g);
    engines.emplace_back(g, 11.0, 0.9, dt, g);
    NoiseStream s(9, 2, g, dt);
    run_coupled(engines, s, 10, 1, nullptr);
    const Field cut = apply_multiplier(engines[1].psi(), Truncation{4.0});
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(cut[i], engines[0].psi()[i]);
}

TEST(Psi, NoiseOnAFinerGridIsMatchedByWavevector) {
    const SpectralGrid g(1, kTwoPi, 16), fine(1, kTwoPi, 64);
    const double dt = 0.02;
    PathEngine coarse_e(g, 6.0, 0.3, dt, fine);
    PathEngine fine_e(fine, 6.0, 0.3, dt, fine);
    NoiseStream s(4, 0, fine, dt);
    for (int k = 0; k < 5; ++k) {
        const Field G = noise_frequency(s);
        coarse_e.evolve_psi(G);
        fine_e.evolve_psi(G);
    }
    for (std::size_t i = 0; i < g.size(); ++i)
        EXPECT_EQ(coarse_e.psi()[i], fine_e.psi()[fine.index_of_wavevector(g.wavevector(i))]);
}

TEST(Wick, ZeroInputGivesZero) {
    const SpectralGrid g(1, kTwoPi, 8);
    const Field w = wick_square(Field(g, Space::frequency), make_params(1, 0.3, kDefaultEps, std::nullopt, 2.0), 0.0);
    for (auto z : w.values()) EXPECT_EQ(z, cplx(0.0, 0.0));
}

TEST(Wick, SingleModeModulusCancelsAgainstMatchingConstant) {
    // One coefficient A at k: |Psi|^2 = |A|^2 / L^{2d} everywhere.
    const SpectralGrid g(2, 3.0, 8);
    Field psi(g, Space::frequency);
    const cplx A{1.7, -0.4};
    psi[g.index_of_wavevector({1, -2, 0})] = A;
    const double c = std::norm(A) / std::pow(g.box_volume(), 2);
    const Field W = to_frequency(wick_square(psi, c));
    EXPECT_NEAR(std::abs(W[0]), 0.0, 1e-13);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(std::abs(W[i]), 0.0, 1e-13);
}

TEST(Wick, EngineUsesTheExactLatticeConstant) {
    const SpectralGrid g(1, kTwoPi, 32);
    PathEngine e(g, 8.0, 0.3, 0.01, g);
    EXPECT_EQ(e.renorm(0.0), 0.0);
    EXPECT_NEAR(e.renorm(0.37), renorm_constant(g, 8.0, 0.3, 0.37), 1e-15);
}

TEST(Wick, SpatialMeanIdentityPerRealization) {
    // mean_x |Psi|^2 = L^{-2d} sum |psi_hat|^2, so mean_x wick is known exactly.
    const SpectralGrid g(2, kTwoPi, 16);
    const auto cfg = small_config(2, 0.9, 6.0);
    const auto path = build_path(cfg, g, 21, 0);
    for (std::size_t k = 0; k < path.times.size(); k += 4) {
        double mean = 0.0, parseval = 0.0;
        for (auto z : path.wick[k].values()) mean += z.real();
        mean /= double(g.size());
        for (auto z : path.psi[k].values()) parseval += std::norm(z);
        parseval /= std::pow(g.box_volume(), 2);
        const double c = renorm_constant(g, 6.0, 0.9, path.times[k]);
        EXPECT_NEAR(mean, parseval - c, 1e-10);
    }
}

TEST(Duhamel, ZeroWickGivesZero) {
    const SpectralGrid g(1, kTwoPi, 8);
    Field I(g, Space::frequency);
    const Field z(g, Space::frequency);
    for (int k = 0; k < 10; ++k) I = duhamel_accumulate(I, z, z, 0.1);
    for (auto v : I.values()) EXPECT_EQ(v, cplx(0.0, 0.0));
}

TEST(Duhamel, ConstantWickIsExactlyLinear) {
    const SpectralGrid g(1, kTwoPi, 8);
    const double c = 0.7, dt = 0.03;
    Field w(g, Space::physical);
    for (auto& v : w.values()) v = c;
    const Field W = to_frequency(w);
    Field I(g, Space::frequency);
    for (int k = 1; k <= 20; ++k) {
        I = duhamel_accumulate(I, W, W, dt);
        const cplx expect = cplx(0.0, -1.0) * c * g.box_volume() * (k * dt);
        EXPECT_NEAR(std::abs(I[0] - expect), 0.0, 1e-12);
    }
}

TEST(Duhamel, OscillatoryModeConvergesAtSecondOrder) {
    const SpectralGrid g(1, kTwoPi, 8);
    const std::size_t idx = g.index_of_wavevector({2, 0, 0});
    const double a = 4.0, omega = 2.5, T = 1.0;
    // -i int_0^T e^{i(T - tau) a} e^{i omega tau} d tau
    const cplx exact = cplx(0.0, -1.0) * std::exp(cplx(0.0, a * T)) * (std::exp(cplx(0.0, (omega - a) * T)) - 1.0) /
                       cplx(0.0, omega - a);
    auto run = [&](int K) {
        const double dt = T / K;
        Field I(g, Space::frequency), wp(g, Space::frequency), wn(g, Space::frequency);
        wp[idx] = 1.0;
        for (int k = 1; k <= K; ++k) {
            wn[idx] = std::exp(cplx(0.0, omega * k * dt));
            I = duhamel_accumulate(I, wp, wn, dt);
            wp[idx] = wn[idx];
        }
        return std::abs(I[idx] - exact);
    };
    const double e1 = run(64), e2 = run(128), e3 = run(256);
    EXPECT_NEAR(e1 / e2, 4.0, 0.2);
    EXPECT_NEAR(e2 / e3, 4.0, 0.2);
}

TEST(Duhamel, EngineMatchesFreeTrapezoid) {
    const SpectralGrid g(1, kTwoPi, 32);
    const double dt = 0.01;
    PathEngine e(g, 8.0, 0.3, dt, g);
    NoiseStream s(2, 0, g, dt);
    Field I(g, Space::frequency), wprev(g, Space::frequency);
    for (int k = 0; k < 12; ++k) {
        e.advance(noise_frequency(s));
        const Field wnext = to_frequency(wick_square(e.psi(), e.renorm(e.time())));
        I = duhamel_accumulate(I, wprev, wnext, dt);
        wprev = wnext;
    }
    double scale = 0.0;
    for (auto v : I.values()) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(std::abs(e.ipsi2()[i] - I[i]), 0.0, 1e-12 * scale);
}

TEST(Localize, ZeroCutoffAndHoelderBound) {
    const SpectralGrid g(1, kTwoPi, 512);
    const auto path = build_path(small_config(1, 0.3, 16.0), g, 8, 0);
    const auto zero = localize(path, CutoffRho::zero(1));
    for (auto z : zero.back().rho_psi.values()) EXPECT_EQ(z, cplx(0.0, 0.0));
    for (auto z : zero.back().rho2_wick.values()) EXPECT_EQ(z, cplx(0.0, 0.0));
    const auto loc = localize(path, CutoffRho::bump(1, 2.0));
    const Field psi = to_physical(path.psi.back());
    EXPECT_LE(lp_norm(g, loc.back().rho_psi.values(), 2.0), lp_norm(g, psi.values(), 2.0) * (1.0 + 1e-10));
    EXPECT_LE(lp_norm(g, loc.back().rho2_wick.values(), 2.0),
              lp_norm(g, path.wick.back().values(), 2.0) * (1.0 + 1e-10));
}

TEST(Localize, MaskedRegionOutsideSupportIsInvisible) {
    const SpectralGrid g(1, kTwoPi, 512);
    const auto path = build_path(small_config(1, 0.3, 16.0), g, 8, 0);
    const auto rho = CutoffRho::bump(1, 1.5);
    const Field r = rho.sample(g);
    const Field psi = to_physical(path.psi.back());
    Field masked = psi;
    for (std::size_t j = 0; j < g.size(); ++j)
        if (r[j].real() == 0.0) masked[j] = 0.0;
    const Field a = multiply_by(psi, r, 1), b = multiply_by(masked, r, 1);
    EXPECT_EQ(lp_norm(g, a.values(), 2.0), lp_norm(g, b.values(), 2.0));
}
