// SPDX-License-Identifier: Apache-2.0
//
// Constants, parameter windows and closed-form lattice oracles for the
// renormalized quadratic Schrodinger model. Other modules ask here instead of
// re-deriving any threshold.
#pragma once

#include "snls/spectral_grid.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace snls {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Rational {
    int num;
    int den;
    double value() const { return double(num) / double(den); }
};

inline void require_dimension(int d) {
    if (d < 1 || d > 3) throw DomainError("dimension must be 1, 2 or 3");
}

/// Gain exponent of the Duhamel-integrated Wick square over the Wick square.
inline double kappa(int d, double alpha) {
    require_dimension(d);
    if (!(alpha > d / 4.0 && alpha < d / 2.0)) throw DomainError("alpha must satisfy d/4 < alpha < d/2");
    switch (d) {
        case 1:
            return 1.0 - alpha;
        case 2:
            return 1.5 - alpha;
        default:
            return alpha >= 1.0 ? 2.0 - alpha : 1.0;
    }
}

/// Noise-smoothing threshold above which the remainder equation is solved.
inline Rational alpha_threshold(int d) {
    require_dimension(d);
    constexpr Rational table[] = {{1, 4}, {5, 6}, {17, 12}};
    return table[d - 1];
}

/// Thresholds of the earlier, weaker well-posedness statement.
inline Rational alpha_threshold_weak(int d) {
    require_dimension(d);
    constexpr Rational table[] = {{7, 20}, {18, 20}, {29, 20}};
    return table[d - 1];
}

/// Regularity exponents paired with the weaker thresholds.
inline Rational s_weak(int d) {
    require_dimension(d);
    constexpr Rational table[] = {{3, 20}, {1, 10}, {1, 24}};
    return table[d - 1];
}

struct StrichartzPair {
    double p;
    double q;
};

inline StrichartzPair default_pair(int d) {
    require_dimension(d);
    constexpr StrichartzPair table[] = {{kInf, 2.0}, {4.0, 4.0}, {2.0, 6.0}};
    return table[d - 1];
}

/// Schrodinger admissibility: 2/p + d/q = d/2, endpoint (2, inf, 2) excluded.
inline bool is_admissible(double p, double q, int d) {
    if (!(p >= 2.0) || !(q >= 2.0)) return false;
    if (p == 2.0 && std::isinf(q) && d == 2) return false;
    const double lhs = (std::isinf(p) ? 0.0 : 2.0 / p) + (std::isinf(q) ? 0.0 : d / q);
    return std::abs(lhs - d / 2.0) <= 1e-12;
}

/// Open interval for the local-smoothing budget eta at regularity s.
inline std::pair<double, double> eta_window(int d, double s) {
    require_dimension(d);
    switch (d) {
        case 1:
            return {2.0 * s, std::min(0.5, 0.75 - s)};
        case 2:
            return {2.0 * s, 0.5 - s};
        default:
            return {2.0 * s, 0.25 - s};
    }
}

inline constexpr double kDefaultEps = 0.01;

struct ModelParams {
    int d = 1;
    double alpha = 0.3;
    double eps = kDefaultEps;
    double s = 0.0;
    double eta = 0.0;
    double theta = 0.0;
    double n = 0.0;
    StrichartzPair pair{kInf, 2.0};

    double kappa_gain() const { return snls::kappa(d, alpha); }
};

/// Every violated constraint, in a fixed order; empty when the set is valid.
inline std::vector<std::string> check_params(int d, double alpha, double eps, std::optional<double> eta,
                                             std::optional<StrichartzPair> pair) {
    std::vector<std::string> errs;
    if (d < 1 || d > 3) {
        errs.emplace_back("d must be 1, 2 or 3");
        return errs;
    }
    if (!(alpha > d / 4.0 && alpha < d / 2.0)) errs.emplace_back("alpha must satisfy d/4 < alpha < d/2");
    if (!(eps > 0.0) || !std::isfinite(eps)) errs.emplace_back("eps must be > 0 so that s > d/2 - alpha");
    const double s = d / 2.0 - alpha + eps;
    const auto [lo, hi] = eta_window(d, s);
    if (!(lo < hi)) {
        std::ostringstream os;
        os << "eta window is empty at s = " << s << " (needs " << lo << " < eta < " << hi
           << "); alpha must exceed the solvability threshold plus eps";
        errs.push_back(os.str());
    } else if (eta) {
        if (!(*eta > lo && *eta < hi)) {
            std::ostringstream os;
            os << "eta must satisfy " << lo << " < eta < " << hi << " for d = " << d;
            errs.push_back(os.str());
        } else if (!(s / *eta > 0.0 && s / *eta < 0.5)) {
            errs.emplace_back("theta = s/eta must lie in (0, 1/2)");
        }
    }
    if (pair && !is_admissible(pair->p, pair->q, d))
        errs.emplace_back("Strichartz pair must satisfy 2/p + d/q = d/2 with (p,q,d) != (2,inf,2)");
    return errs;
}

/// Builds a fully resolved parameter set; eta defaults to its window midpoint.
inline ModelParams make_params(int d, double alpha, double eps = kDefaultEps, std::optional<double> eta = std::nullopt,
                               double n = 0.0, std::optional<StrichartzPair> pair = std::nullopt) {
    auto errs = check_params(d, alpha, eps, eta, pair);
    if (!errs.empty()) {
        std::string msg = errs.front();
        for (std::size_t i = 1; i < errs.size(); ++i) msg += "; " + errs[i];
        throw DomainError(msg);
    }
    ModelParams p;
    p.d = d;
    p.alpha = alpha;
    p.eps = eps;
    p.s = d / 2.0 - alpha + eps;
    const auto [lo, hi] = eta_window(d, p.s);
    p.eta = eta ? *eta : 0.5 * (lo + hi);
    p.theta = p.s / p.eta;
    if (!(p.theta > 0.0 && p.theta < 0.5)) throw DomainError("theta = s/eta must lie in (0, 1/2)");
    if (!(n >= 0.0)) throw DomainError("truncation radius must be >= 0");
    p.n = n;
    p.pair = pair ? *pair : default_pair(d);
    return p;
}

// ---------------------------------------------------------------------------
// Lattice oracles

/// t * L^-d * sum_{|xi| <= n} (1 + |xi|^2)^-alpha: the exact discrete E|Psi_n(t,x)|^2.
inline double renorm_constant(const SpectralGrid& g, double n, double alpha, double t) {
    g.require_truncation(n);
    if (!(t >= 0.0)) throw DomainError("time must be >= 0");
    if (t == 0.0) return 0.0;
    const auto xi2 = g.xi_squared();
    double acc = 0.0;
    for (double v : xi2)
        if (inside_ball(v, n)) acc += std::pow(1.0 + v, -alpha);
    return t * acc / g.box_volume();
}

struct PairingValues {
    cplx conjugate;  // E[Psi(s,x) conj Psi(t,y)]
    cplx plain;      // E[Psi(s,x) Psi(t,y)]
};

/// Two-point, two-time moments of the truncated stochastic convolution,
/// evaluated on the lattice. The plain pairing carries the factor (-i)^2 = -1
/// coming from the two Duhamel prefactors.
inline PairingValues covariance_oracle(const SpectralGrid& g, double n, double alpha, double s_time, double t_time,
                                       std::span<const double> x, std::span<const double> y) {
    g.require_truncation(n);
    if (!(s_time >= 0.0) || !(t_time >= s_time)) throw DomainError("need 0 <= s <= t");
    const int d = g.dim();
    if (static_cast<int>(x.size()) < d || static_cast<int>(y.size()) < d)
        throw ContractViolation("covariance_oracle: point dimension mismatch");
    const double m = std::min(s_time, t_time);
    PairingValues out{{0.0, 0.0}, {0.0, 0.0}};
    if (m == 0.0) return out;
    const auto xi2 = g.xi_squared();
    const double dk = g.frequency_step();
    for (std::size_t i = 0; i < xi2.size(); ++i) {
        const double a = xi2[i];
        if (!inside_ball(a, n)) continue;
        const auto k = g.wavevector(i);
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += dk * k[c] * (x[c] - y[c]);
        const double w = std::pow(1.0 + a, -alpha);
        const cplx space = std::polar(1.0, -dot);
        out.conjugate += w * std::polar(1.0, (s_time - t_time) * a) * space;
        // int_0^m exp(i (s + t - 2 t') a) dt'
        cplx tint;
        if (a == 0.0) {
            tint = m;
        } else {
            const cplx num = std::polar(1.0, (s_time + t_time) * a) - std::polar(1.0, (s_time + t_time - 2.0 * m) * a);
            tint = num / cplx(0.0, 2.0 * a);
        }
        out.plain -= w * tint * space;
    }
    const double vol = g.box_volume();
    out.conjugate = out.conjugate * m / vol;
    out.plain /= vol;
    return out;
}

}  // namespace snls
