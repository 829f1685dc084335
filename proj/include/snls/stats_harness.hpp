// SPDX-License-Identifier: Apache-2.0
//
// Ensemble orchestration and the statistical studies: covariance agreement,
// divergence and Cauchy rates, time increments, the smoothing gap between the
// Wick square and its Duhamel integral, and truncation convergence of the
// full solution.
#pragma once

#include "snls/analytic_reference.hpp"
#include "snls/dpd_solver.hpp"
#include "snls/noise_sampler.hpp"
#include "snls/spectral_grid.hpp"
#include "snls/stochastic_objects.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace snls {

// ---------------------------------------------------------------------------
// Basic statistics

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    double sd = 0.0;
    std::size_t n = 0;
};

inline MeanSe mean_se(std::span<const double> xs) {
    MeanSe r;
    r.n = xs.size();
    if (xs.empty()) return r;
    double m = 0.0;
    for (double x : xs) m += x;
    m /= double(xs.size());
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    r.mean = m;
    if (xs.size() > 1) {
        r.sd = std::sqrt(v / double(xs.size() - 1));
        r.se = r.sd / std::sqrt(double(xs.size()));
    }
    return r;
}

struct Fit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;  // from residuals
    double r2 = 0.0;
    std::size_t points = 0;
};

class DegenerateRegression : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Ordinary least squares y = a + b x.
inline Fit ols(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ContractViolation("ols: length mismatch");
    if (x.size() < 3) throw DegenerateRegression("regression needs at least 3 usable points");
    const double n = double(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0) throw DegenerateRegression("regression abscissae are all equal");
    Fit f;
    f.points = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - f.intercept - f.slope * x[i];
        rss += e * e;
    }
    f.slope_se = std::sqrt(rss / (n - 2.0) / sxx);
    f.r2 = syy > 0.0 ? 1.0 - rss / syy : 1.0;
    return f;
}

/// log-log fit; non-positive ordinates are dropped.
inline Fit loglog_fit(std::span<const double> x, std::span<const double> y) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > 0.0 && y[i] > 0.0 && std::isfinite(y[i])) {
            lx.push_back(std::log(x[i]));
            ly.push_back(std::log(y[i]));
        }
    return ols(lx, ly);
}

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<double>(), p); }

/// samples[m][j]: rung j of realization m. Splits the ensemble into
/// contiguous batches, fits a log-log slope per batch and returns the
/// standard error of the batch slopes divided by sqrt(batches).
inline double batch_slope_se(const std::vector<std::vector<double>>& samples, std::span<const double> x,
                             std::size_t column, std::size_t stride, int batches) {
    const std::size_t M = samples.size();
    if (batches < 2 || M < std::size_t(2 * batches)) return 0.0;
    std::vector<double> slopes;
    const std::size_t per = M / batches;
    for (int b = 0; b < batches; ++b) {
        std::vector<double> means(x.size(), 0.0);
        for (std::size_t m = b * per; m < (b + 1) * per; ++m)
            for (std::size_t j = 0; j < x.size(); ++j) means[j] += samples[m][column + j * stride];
        for (auto& v : means) v /= double(per);
        try {
            slopes.push_back(loglog_fit(x, means).slope);
        } catch (const DegenerateRegression&) {
        }
    }
    if (slopes.size() < 2) return 0.0;
    const auto ms = mean_se(slopes);
    return ms.se;
}

// ---------------------------------------------------------------------------
// Ensemble runner

/// Runs f(m) for m in [0, M) on `threads` workers. Results are stored by
/// index so any reduction over them is independent of the schedule.
template <class F>
auto run_ensemble(std::size_t M, int threads, F&& f) -> std::vector<decltype(f(std::size_t{0}))> {
    using R = decltype(f(std::size_t{0}));
    std::vector<std::optional<R>> slots(M);
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t m = next.fetch_add(1);
            if (m >= M) return;
            try {
                slots[m].emplace(f(m));
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!err) err = std::current_exception();
                next.store(M);
                return;
            }
        }
    };
    const int k = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(M, 1))));
    if (k == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < k; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (err) std::rethrow_exception(err);
    std::vector<R> out;
    out.reserve(M);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------------------
// Study configuration and results

enum class StudyKind { covariance, renorm_rate, cauchy_rate, smoothing, hoelder, solver_convergence, white_noise, wick_centering };

inline const char* to_string(StudyKind k) {
    switch (k) {
        case StudyKind::covariance:
            return "covariance";
        case StudyKind::renorm_rate:
            return "renorm_rate";
        case StudyKind::cauchy_rate:
            return "cauchy_rate";
        case StudyKind::smoothing:
            return "smoothing";
        case StudyKind::hoelder:
            return "hoelder";
        case StudyKind::solver_convergence:
            return "solver_convergence";
        case StudyKind::white_noise:
            return "white_noise";
        case StudyKind::wick_centering:
            return "wick_centering";
    }
    return "?";
}

struct StudyConfig {
    StudyKind kind = StudyKind::covariance;
    int d = 1;
    double alpha = 0.3;
    double eps = kDefaultEps;
    std::optional<double> eta;
    double L = 2.0 * std::numbers::pi;
    int N = 0;  // 0: smallest power of two the study needs
    double T = 0.5;
    int K = 256;
    double n = 32.0;
    std::vector<double> ladder{8, 16, 32, 64, 128};
    std::optional<double> sigma;        // smoothing: Duhamel probe regularity
    std::optional<double> sigma_wick;   // smoothing: Wick probe regularity
    std::vector<double> sigma_scan;     // smoothing: extra Duhamel probes
    std::vector<double> lags{};         // hoelder: lags as fractions of T
    std::size_t M = 1000;
    std::uint64_t seed = 20240601;
    int threads = 1;
    double confidence = 0.95;
    double phase_budget = 1.0;
    double rho_radius = 0.375;  // fraction of L
    double chi_radius = 0.375;  // fraction of L
    int norm_padding = 2;
    int batches = 20;
    double picard_tol = 1e-10;
    int picard_max = 50;
    bool dealias = false;
    SolverMode solver_mode = SolverMode::step_local;
};

struct Estimate {
    std::string label;
    double x = 0.0;
    double value = 0.0;
    double se = 0.0;
};

struct Regression {
    std::string label;
    Fit fit;
    double mc_se = 0.0;  // batch Monte Carlo standard error of the slope
};

struct Verdict {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    std::string tolerance;
    std::string detail;
};

struct StudyResult {
    std::string kind;
    std::vector<Estimate> estimates;
    std::vector<Regression> regressions;
    std::vector<Verdict> verdicts;
    std::vector<std::pair<std::string, std::string>> provenance;

    bool passed() const {
        return !verdicts.empty() && std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
    }
    const Verdict* verdict(const std::string& name) const {
        for (const auto& v : verdicts)
            if (v.name == name) return &v;
        return nullptr;
    }
    const Regression* regression(const std::string& label) const {
        for (const auto& r : regressions)
            if (r.label == label) return &r;
        return nullptr;
    }
};

inline std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline void add_provenance(StudyResult& r, const StudyConfig& c) {
    r.provenance = {{"kind", to_string(c.kind)},
                    {"d", std::to_string(c.d)},
                    {"alpha", fmt(c.alpha)},
                    {"eps", fmt(c.eps)},
                    {"L", fmt(c.L)},
                    {"N", std::to_string(c.N)},
                    {"T", fmt(c.T)},
                    {"K", std::to_string(c.K)},
                    {"M", std::to_string(c.M)},
                    {"seed", std::to_string(c.seed)},
                    {"phase_budget", fmt(c.phase_budget)}};
}

/// Smallest power of two N >= 8 with pi N / L >= freq (strictly above when
/// `strict`).
inline int grid_points_for(double L, double freq, bool strict = false) {
    int N = 8;
    while (true) {
        const double nyq = std::numbers::pi * N / L;
        if (strict ? nyq > freq * (1.0 + 1e-12) : nyq >= freq * (1.0 - 1e-12)) return N;
        N *= 2;
        if (N > (1 << 24)) throw DomainError("no feasible grid below the point budget");
    }
}

inline void check_study(const StudyConfig& c, bool statistical) {
    if (statistical && c.M < 100) throw DomainError("ensemble size M must be >= 100 for a statistical verdict");
    for (std::size_t i = 1; i < c.ladder.size(); ++i)
        if (!(c.ladder[i] > c.ladder[i - 1])) throw DomainError("truncation ladder must be strictly increasing");
    if (!(c.T > 0.0)) throw DomainError("final time must be > 0");
    if (c.K < 1) throw DomainError("K must be >= 1");
    if (!(c.rho_radius > 0.0 && c.rho_radius <= 0.375)) throw DomainError("cutoff radius fraction must lie in (0, 3/8]");
}

/// ||rho^power * f||_{H^sigma}^2 for frequency data f, evaluated on a grid
/// refined by `padding` so the cutoff product is not aliased, and further
/// until rho itself is resolved.
class LocalizedNormSq {
  public:
    LocalizedNormSq(const SpectralGrid& src, const CutoffRho& rho, int power, std::vector<double> sigmas, int padding)
        : fine_(src.dim(), src.length(), resolved_points(rho, src.length(), src.points_per_axis() * std::max(1, padding))),
          rho_pow_(fine_.size()),
          weights_(sigmas.size()),
          sigmas_(std::move(sigmas)) {
        rho.validate_for(fine_);
        const Field r = rho.sample(fine_);
        for (std::size_t i = 0; i < fine_.size(); ++i) rho_pow_[i] = std::pow(r[i].real(), power);
        const auto xi2 = fine_.xi_squared();
        for (std::size_t j = 0; j < sigmas_.size(); ++j) {
            weights_[j].resize(fine_.size());
            for (std::size_t i = 0; i < fine_.size(); ++i) weights_[j][i] = std::pow(1.0 + xi2[i], sigmas_[j]);
        }
    }

    std::vector<double> operator()(const Field& f) const {
        Field g = transfer_modes(f, fine_);
        inverse_inplace(fine_, g.values());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= rho_pow_[i];
        forward_inplace(fine_, g.values());
        std::vector<double> out(sigmas_.size(), 0.0);
        const double vol = fine_.box_volume();
        for (std::size_t j = 0; j < sigmas_.size(); ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += weights_[j][i] * std::norm(g[i]);
            out[j] = acc / vol;
        }
        return out;
    }

  private:
    SpectralGrid fine_;
    std::vector<double> rho_pow_;
    std::vector<std::vector<double>> weights_;
    std::vector<double> sigmas_;
};

// ---------------------------------------------------------------------------
// Studies

/// Var[<increment, f>] against dt ||f||^2 for three real test functions.
inline StudyResult run_white_noise_study(const StudyConfig& c) {
    check_study(c, true);
    const int N = c.N > 0 ? c.N : 128;
    const SpectralGrid g(c.d, c.L, N);
    const double dt = c.T / c.K;
    std::vector<std::vector<double>> tests;
    std::vector<std::string> names{"gaussian", "cosine", "bump"};
    {
        std::vector<double> f1(g.size()), f2(g.size()), f3(g.size());
        const Field bump = CutoffRho::bump(c.d, c.rho_radius * c.L).sample(g);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const auto j = g.unflatten(i);
            double r2 = 0.0, ph = 0.0;
            for (int a = 0; a < c.d; ++a) {
                const double x = j[a] * g.spacing() - 0.5 * c.L;
                r2 += x * x;
                ph += 3.0 * g.frequency_step() * j[a] * g.spacing();
            }
            f1[i] = std::exp(-r2 / (0.02 * c.L * c.L));
            f2[i] = std::cos(ph);
            f3[i] = bump[i].real();
        }
        tests = {f1, f2, f3};
    }
    auto samples = run_ensemble(c.M, c.threads, [&](std::size_t m) {
        NoiseStream s(c.seed, m, g, dt);
        const Field inc = s.next_increment();
        std::vector<double> out;
        for (const auto& f : tests) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += f[i] * inc[i].real();
            out.push_back(acc * g.cell_volume());
        }
        return out;
    });
    StudyResult r;
    r.kind = "white_noise";
    add_provenance(r, c);
    for (std::size_t t = 0; t < tests.size(); ++t) {
        std::vector<double> col;
        for (const auto& s : samples) col.push_back(s[t]);
        const auto ms = mean_se(col);
        const double var = ms.sd * ms.sd;
        double l2 = 0.0;
        for (double v : tests[t]) l2 += v * v;
        const double expect = dt * l2 * g.cell_volume();
        const double rel = var / expect - 1.0;
        r.estimates.push_back({"variance_" + names[t], double(t), var, var * std::sqrt(2.0 / double(c.M - 1))});
        r.estimates.push_back({"expected_" + names[t], double(t), expect, 0.0});
        r.verdicts.push_back({"white_noise_" + names[t], std::abs(rel) <= 0.05, rel, "|relative error| <= 0.05",
                              "empirical variance vs dt*||f||^2"});
    }
    return r;
}

/// Two-point, two-time pairings of Psi_n against the lattice oracle.
inline StudyResult run_covariance_study(const StudyConfig& c) {
    check_study(c, true);
    const auto p = make_params(c.d, c.alpha, c.eps, c.eta, c.n);
    const int N = c.N > 0 ? c.N : grid_points_for(c.L, c.n, true);
    const SpectralGrid g(c.d, c.L, N);
    g.require_truncation(c.n);
    if (c.K % 4 != 0) throw DomainError("covariance study needs K divisible by 4");
    const std::vector<int> tk{c.K / 4, c.K / 2, c.K};
    const std::vector<int> shift{0, std::max(1, N / 64), N / 8};
    // x at the box centre, y = x + shift along the first axis.
    std::array<int, 3> xc{N / 2, N / 2, N / 2};
    const std::size_t ix = g.flatten(xc);
    std::vector<std::size_t> iy;
    for (int sh : shift) {
        auto yc = xc;
        yc[0] += sh;
        iy.push_back(g.flatten(yc));
    }
    const double dt = c.T / c.K;
    auto samples = run_ensemble(c.M, c.threads, [&](std::size_t m) {
        NoiseStream s(c.seed, m, g, dt);
        PathEngine e(g, c.n, c.alpha, dt, g);
        Field gbuf(g, Space::frequency);
        std::vector<Field> snaps;
        for (int k = 1; k <= c.K; ++k) {
            s.next_into(gbuf.values());
            forward_inplace(g, gbuf.values());
            e.evolve_psi(gbuf);
            if (std::find(tk.begin(), tk.end(), k) != tk.end()) snaps.push_back(to_physical(e.psi()));
        }
        // products: for each (a, b, shift): conj pairing and plain pairing
        std::vector<double> out;
        for (std::size_t a = 0; a < tk.size(); ++a)
            for (std::size_t b = 0; b < tk.size(); ++b)
                for (std::size_t h = 0; h < shift.size(); ++h) {
                    const cplx X = snaps[a][ix];
                    const cplx Y = snaps[b][iy[h]];
                    const cplx conj_pair = X * std::conj(Y);
                    const cplx plain = X * Y;
                    out.insert(out.end(), {conj_pair.real(), conj_pair.imag(), plain.real(), plain.imag()});
                }
        return out;
    });
    StudyResult r;
    r.kind = "covariance";
    add_provenance(r, c);
    std::size_t col = 0;
    int failures = 0;
    double worst = 0.0;
    const double xpt[3] = {xc[0] * g.spacing(), xc[1] * g.spacing(), xc[2] * g.spacing()};
    for (std::size_t a = 0; a < tk.size(); ++a)
        for (std::size_t b = 0; b < tk.size(); ++b)
            for (std::size_t h = 0; h < shift.size(); ++h) {
                const double sa = c.T * tk[a] / c.K;
                const double sb = c.T * tk[b] / c.K;
                double ypt[3] = {xpt[0] + shift[h] * g.spacing(), xpt[1], xpt[2]};
                PairingValues o;
                if (sa <= sb) {
                    o = covariance_oracle(g, c.n, c.alpha, sa, sb, std::span<const double>(xpt, 3), std::span<const double>(ypt, 3));
                } else {
                    const auto sw = covariance_oracle(g, c.n, c.alpha, sb, sa, std::span<const double>(ypt, 3),
                                                      std::span<const double>(xpt, 3));
                    o = {std::conj(sw.conjugate), sw.plain};
                }
                const double want[4] = {o.conjugate.real(), o.conjugate.imag(), o.plain.real(), o.plain.imag()};
                const char* names[4] = {"conj_re", "conj_im", "plain_re", "plain_im"};
                for (int q = 0; q < 4; ++q, ++col) {
                    std::vector<double> v;
                    v.reserve(samples.size());
                    for (const auto& s : samples) v.push_back(s[col]);
                    const auto ms = mean_se(v);
                    std::ostringstream lab;
                    lab << names[q] << "_s" << tk[a] << "_t" << tk[b] << "_dx" << shift[h];
                    r.estimates.push_back({lab.str(), want[q], ms.mean, ms.se});
                    const double z = ms.se > 0.0 ? std::abs(ms.mean - want[q]) / ms.se : (ms.mean == want[q] ? 0.0 : kInf);
                    worst = std::max(worst, z);
                    if (!(z <= 5.0)) ++failures;
                }
            }
    r.verdicts.push_back({"covariance_probes_within_5se", failures == 0, worst, "max |z| <= 5 over all probes",
                          std::to_string(failures) + " probe components outside 5 standard errors"});
    return r;
}

/// log c_n against log n over the ladder (deterministic lattice sums).
inline StudyResult run_renorm_study(const StudyConfig& c) {
    check_study(c, false);
    if (c.ladder.size() < 4) throw DomainError("rate studies need a ladder of at least 4 truncations");
    const double nmax = c.ladder.back();
    // Strict: a ball touching the Nyquist line would lose its +N/2 points.
    const int N = c.N > 0 ? c.N : grid_points_for(c.L, nmax, true);
    const SpectralGrid g(c.d, c.L, N);
    StudyResult r;
    r.kind = "renorm_rate";
    add_provenance(r, c);
    std::vector<double> cs;
    for (double n : c.ladder) {
        cs.push_back(renorm_constant(g, n, c.alpha, c.T));
        r.estimates.push_back({"c_n", n, cs.back(), 0.0});
    }
    const Fit f = loglog_fit(c.ladder, cs);
    r.regressions.push_back({"log_c_vs_log_n", f, 0.0});
    // Successive increments c_2n - c_n isolate the power law from the
    // additive constant; reported for diagnosis, not judged.
    std::vector<double> xn, inc;
    for (std::size_t i = 0; i + 1 < cs.size(); ++i) {
        xn.push_back(c.ladder[i]);
        inc.push_back(cs[i + 1] - cs[i]);
    }
    if (xn.size() >= 3) r.regressions.push_back({"log_increment_vs_log_n", loglog_fit(xn, inc), 0.0});
    const double target = c.d - 2.0 * c.alpha;
    r.verdicts.push_back({"renorm_slope", std::abs(f.slope - target) <= 0.05, f.slope,
                          "|slope - (d - 2 alpha)| <= 0.05, d - 2 alpha = " + fmt(target), ""});
    return r;
}

/// E||rho(Psi_2n - Psi_n)(T)||^2_{H^-s} on coupled noise.
inline StudyResult run_cauchy_study(const StudyConfig& c) {
    check_study(c, true);
    if (c.ladder.size() < 4) throw DomainError("rate studies need a ladder of at least 4 truncations");
    const auto p = make_params(c.d, c.alpha, c.eps, c.eta);
    const double top = 2.0 * c.ladder.back();
    const int N = c.N > 0 ? c.N : grid_points_for(c.L, top, true);
    const SpectralGrid g(c.d, c.L, N);
    g.require_truncation(top);
    const CutoffRho rho = CutoffRho::bump(c.d, c.rho_radius * c.L);
    const LocalizedNormSq norm(g, rho, 1, {-p.s}, 1);
    const double dt = c.T / c.K;
    const std::size_t R = c.ladder.size();
    auto samples = run_ensemble(c.M, c.threads, [&](std::size_t m) {
        NoiseStream s(c.seed, m, g, dt);
        PathEngine e(g, top, c.alpha, dt, g);
        Field gbuf(g, Space::frequency);
        for (int k = 0; k < c.K; ++k) {
            s.next_into(gbuf.values());
            forward_inplace(g, gbuf.values());
            e.evolve_psi(gbuf);
        }
        const auto xi2 = g.xi_squared();
        std::vector<double> out;
        for (double n : c.ladder) {
            Field band(g, Space::frequency);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (inside_ball(xi2[i], 2.0 * n) && !inside_ball(xi2[i], n)) band[i] = e.psi()[i];
            out.push_back(norm(band)[0]);
        }
        return out;
    });
    StudyResult r;
    r.kind = "cauchy_rate";
    add_provenance(r, c);
    std::vector<double> means;
    for (std::size_t j = 0; j < R; ++j) {
        std::vector<double> v;
        for (const auto& s : samples) v.push_back(s[j]);
        const auto ms = mean_se(v);
        means.push_back(ms.mean);
        r.estimates.push_back({"cauchy_sq_norm", c.ladder[j], ms.mean, ms.se});
    }
    // Paired one-sided tests of strict decrease, Bonferroni over the pairs.
    const double zc = normal_quantile(1.0 - (1.0 - c.confidence) / double(R - 1));
    bool all = true;
    double zmin = kInf;
    for (std::size_t j = 0; j + 1 < R; ++j) {
        std::vector<double> diff;
        for (const auto& s : samples) diff.push_back(s[j] - s[j + 1]);
        const auto ms = mean_se(diff);
        const double z = ms.se > 0.0 ? ms.mean / ms.se : 0.0;
        r.estimates.push_back({"decrease_z", c.ladder[j], z, 0.0});
        zmin = std::min(zmin, z);
        if (!(z > zc)) all = false;
    }
    r.verdicts.push_back({"cauchy_strictly_decreasing", all, zmin, "every paired z > " + fmt(zc) + " (one-sided, Bonferroni)", ""});
    Fit f = loglog_fit(c.ladder, means);
    const double se = batch_slope_se(samples, c.ladder, 0, 1, c.batches);
    r.regressions.push_back({"log_cauchy_vs_log_n", f, se});
    const double zq = normal_quantile(c.confidence);
    r.verdicts.push_back({"cauchy_slope_negative", f.slope + zq * se < 0.0, f.slope,
                          "slope + " + fmt(zq) + " * mc_se < 0", "mc_se = " + fmt(se)});
    return r;
}

/// Per-cell ensemble mean of the Wick square at four times.
inline StudyResult run_wick_centering_study(const StudyConfig& c) {
    check_study(c, true);
    const int N = c.N > 0 ? c.N : grid_points_for(c.L, 2.0 * c.n, false);
    const SpectralGrid g(c.d, c.L, N);
    g.require_truncation(c.n);
    if (c.K % 4 != 0) throw DomainError("wick centering needs K divisible by 4");
    const std::vector<int> tk{c.K / 4, c.K / 2, 3 * c.K / 4, c.K};
    const double dt = c.T / c.K;
    struct Out {
        std::vector<double> cells;
        double identity_err;
    };
    auto samples = run_ensemble(c.M, c.threads, [&](std::size_t m) {
        NoiseStream s(c.seed, m, g, dt);
        PathEngine e(g, c.n, c.alpha, dt, g);
        Field gbuf(g, Space::frequency);
        Out o{{}, 0.0};
        for (int k = 1; k <= c.K; ++k) {
            s.next_into(gbuf.values());
            forward_inplace(g, gbuf.values());
            e.evolve_psi(gbuf);
            if (std::find(tk.begin(), tk.end(), k) == tk.end()) continue;
            const double cn = e.renorm(e.time());
            const Field w = wick_square(e.psi(), cn);
            double mean = 0.0;
            for (const auto& z : w.values()) {
                o.cells.push_back(z.real());
                mean += z.real();
            }
            mean /= double(g.size());
            // Parseval: spatial mean of |Psi|^2 equals L^-2d sum |psi_hat|^2.
            double parseval = 0.0;
            for (const auto& z : e.psi().values()) parseval += std::norm(z);
            parseval /= g.box_volume() * g.box_volume();
            o.identity_err = std::max(o.identity_err, std::abs(mean - (parseval - cn)) / std::max(1.0, cn));
        }
        return o;
    });
    StudyResult r;
    r.kind = "wick_centering";
    add_provenance(r, c);
    const std::size_t cols = samples.front().cells.size();
    double worst = 0.0;
    int fails = 0;
    for (std::size_t j = 0; j < cols; ++j) {
        std::vector<double> v;
        v.reserve(samples.size());
        for (const auto& s : samples) v.push_back(s.cells[j]);
        const auto ms = mean_se(v);
        const double z = ms.se > 0.0 ? std::abs(ms.mean) / ms.se : 0.0;
        worst = std::max(worst, z);
        if (z > 4.0) ++fails;
        if (j % g.size() == g.size() / 2) r.estimates.push_back({"wick_mean_centre_cell", double(tk[j / g.size()]), ms.mean, ms.se});
    }
    double ident = 0.0;
    for (const auto& s : samples) ident = std::max(ident, s.identity_err);
    r.verdicts.push_back({"wick_cellwise_mean_zero", fails == 0, worst, "every |mean|/se <= 4",
                          std::to_string(fails) + " of " + std::to_string(cols) + " cell-time tests exceeded 4 se"});
    r.verdicts.push_back({"wick_exact_centering_identity", ident <= 1e-10, ident, "<= 1e-10 relative",
                          "grid mean of wick vs Parseval sum minus c_n(t)"});
    return r;
}

/// Ladder statistics of the localized Wick square and its Duhamel integral.
inline StudyResult run_smoothing_study(const StudyConfig& c) {
    check_study(c, true);
    if (c.ladder.size() < 4) throw DomainError("rate studies need a ladder of at least 4 truncations");
    const auto p = make_params(c.d, c.alpha, c.eps, c.eta);
    const double kap = kappa(c.d, c.alpha);
    const double sigma = c.sigma ? *c.sigma : -2.0 * p.s + kap - 0.05;
    const double sigma_w = c.sigma_wick ? *c.sigma_wick : -2.0 * p.s + 0.1;
    std::vector<double> sig_i{sigma};
    for (double v : c.sigma_scan) sig_i.push_back(v);
    const std::size_t R = c.ladder.size();
    const double nmax = c.ladder.back();
    const CutoffRho rho = CutoffRho::bump(c.d, c.rho_radius * c.L);
    std::vector<SpectralGrid> grids;
    std::vector<LocalizedNormSq> norm_i, norm_w;
    for (double n : c.ladder) {
        // Nyquist at least 2n holds |Psi_n|^2 without aliasing.
        const int Nr = c.N > 0 ? c.N : grid_points_for(c.L, 2.0 * n, false);
        grids.emplace_back(c.d, c.L, Nr);
        grids.back().require_truncation(2.0 * n);
        norm_i.emplace_back(grids.back(), rho, 2, sig_i, c.norm_padding);
        norm_w.emplace_back(grids.back(), rho, 2, std::vector<double>{sigma_w}, c.norm_padding);
    }
    // Noise on the top rung's grid; its Nyquist (>= 2 nmax) exceeds every ball.
    const SpectralGrid& noise_grid = grids.back();
    const int sub = substeps_for_phase(c.T, c.K, nmax, c.phase_budget);
    const double dt = c.T / (double(c.K) * sub);
    const std::size_t stride = 1 + sig_i.size();
    auto samples = run_ensemble(c.M, c.threads, [&](std::size_t m) {
        NoiseStream s(c.seed, m, noise_grid, dt);
        std::vector<PathEngine> engines;
        for (std::size_t j = 0; j < R; ++j) engines.emplace_back(grids[j], c.ladder[j], c.alpha, dt, noise_grid);
        run_coupled(engines, s, c.K, sub, nullptr);
        std::vector<double> out;
        for (std::size_t j = 0; j < R; ++j) {
            out.push_back(norm_w[j](engines[j].wick_frequency())[0]);
            const auto vi = norm_i[j](engines[j].ipsi2());
            out.insert(out.end(), vi.begin(), vi.end());
        }
        return out;
    });
    StudyResult r;
    r.kind = "smoothing";
    add_provenance(r, c);
    r.provenance.emplace_back("substeps", std::to_string(sub));
    r.provenance.emplace_back("sigma_duhamel", fmt(sigma));
    r.provenance.emplace_back("sigma_wick", fmt(sigma_w));
    auto column_fit = [&](std::size_t col, const std::string& label, const std::string& est) {
        std::vector<double> means;
        for (std::size_t j = 0; j < R; ++j) {
            std::vector<double> v;
            for (const auto& s : samples) v.push_back(s[j * stride + col]);
            const auto ms = mean_se(v);
            means.push_back(ms.mean);
            r.estimates.push_back({est, c.ladder[j], ms.mean, ms.se});
        }
        const Fit f = loglog_fit(c.ladder, means);
        const double se = batch_slope_se(samples, c.ladder, col, stride, c.batches);
        r.regressions.push_back({label, f, se});
        return f;
    };
    const Fit fw = column_fit(0, "wick_slope_sigma_" + fmt(sigma_w), "wick_sq_norm");
    const Fit fi = column_fit(1, "duhamel_slope_sigma_" + fmt(sigma), "duhamel_sq_norm");
    std::vector<double> scan_sig{sigma}, scan_slope{fi.slope};
    for (std::size_t q = 1; q < sig_i.size(); ++q) {
        const Fit fq = column_fit(1 + q, "duhamel_slope_sigma_" + fmt(sig_i[q]), "duhamel_sq_norm_sigma_" + fmt(sig_i[q]));
        scan_sig.push_back(sig_i[q]);
        scan_slope.push_back(fq.slope);
    }
    if (scan_sig.size() >= 3) {
        // Probe regularity where the Duhamel slope crosses zero.
        const Fit lin = ols(scan_sig, scan_slope);
        if (lin.slope != 0.0)
            r.estimates.push_back({"duhamel_zero_slope_sigma", 0.0, -lin.intercept / lin.slope, 0.0});
    }
    r.verdicts.push_back({"duhamel_bounded", fi.slope <= 0.05, fi.slope, "log-log slope <= 0.05",
                          "sigma = -2s + kappa - 0.05 = " + fmt(sigma)});
    r.verdicts.push_back({"wick_diverging", fw.slope >= 0.1, fw.slope, "log-log slope >= 0.1",
                          "sigma' = -2s + 0.1 = " + fmt(sigma_w)});
    return r;
}

/// E||rho(Psi_n(t0 + h) - Psi_n(t0))||^2_{H^-s} against the lag h.
inline StudyResult run_hoelder_study(const StudyConfig& c) {
    check_study(c, true);
    const auto p = make_params(c.d, c.alpha, c.eps, c.eta, c.n);
    const int N = c.N > 0 ? c.N : grid_points_for(c.L, c.n, true);
    const SpectralGrid g(c.d, c.L, N);
    g.require_truncation(c.n);
    std::vector<double> lags = c.lags;
    if (lags.empty()) lags = {1.0 / 64, 1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4};
    const int k0 = c.K / 2;
    std::vector<int> lag_steps;
    for (double f : lags) {
        const double steps = f * c.K;
        if (std::abs(steps - std::round(steps)) > 1e-9 || steps < 1 || k0 + std::lround(steps) > c.K)
            throw DomainError("hoelder lags must be positive multiples of T/K within [T/2, T]");
        lag_steps.push_back(static_cast<int>(std::lround(steps)));
    }
    const CutoffRho rho = CutoffRho::bump(c.d, c.rho_radius * c.L);
    const LocalizedNormSq norm(g, rho, 1, {-p.s}, 1);
    const double dt = c.T / c.K;
    auto samples = run_ensemble(c.M, c.threads, [&](std::size_t m) {
        NoiseStream s(c.seed, m, g, dt);
        PathEngine e(g, c.n, c.alpha, dt, g);
        Field gbuf(g, Space::frequency);
        std::optional<Field> base;
        std::vector<double> out(lag_steps.size(), 0.0);
        for (int k = 1; k <= c.K; ++k) {
            s.next_into(gbuf.values());
            forward_inplace(g, gbuf.values());
            e.evolve_psi(gbuf);
            if (k == k0) base = e.psi();
            for (std::size_t j = 0; j < lag_steps.size(); ++j)
                if (k == k0 + lag_steps[j]) {
                    Field diff = e.psi();
                    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= (*base)[i];
                    out[j] = norm(diff)[0];
                }
        }
        return out;
    });
    StudyResult r;
    r.kind = "hoelder";
    add_provenance(r, c);
    std::vector<double> hs, means;
    for (std::size_t j = 0; j < lag_steps.size(); ++j) {
        std::vector<double> v;
        for (const auto& s : samples) v.push_back(s[j]);
        const auto ms = mean_se(v);
        hs.push_back(lag_steps[j] * dt);
        means.push_back(ms.mean);
        r.estimates.push_back({"increment_sq_norm", hs.back(), ms.mean, ms.se});
    }
    const Fit f = loglog_fit(hs, means);
    const double se = batch_slope_se(samples, hs, 0, 1, c.batches);
    r.regressions.push_back({"log_increment_vs_log_h", f, se});
    const double zq = normal_quantile(c.confidence);
    r.verdicts.push_back({"hoelder_slope_positive", f.slope - zq * se > 0.0, f.slope, "slope - " + fmt(zq) + " * mc_se > 0",
                          "mc_se = " + fmt(se)});
    return r;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Coupled solves across the ladder; ||chi(u_n - u_2n)(T)||_{H^-s}.
inline StudyResult run_solver_convergence_study(const StudyConfig& c, bool with_noise = true,
                                                const std::optional<Field>& phi = std::nullopt) {
    check_study(c, with_noise);
    if (c.ladder.size() < 2) throw DomainError("solver convergence needs at least 2 truncations");
    const auto p = make_params(c.d, c.alpha, c.eps, c.eta);
    const double nmax = c.ladder.back();
    const CutoffRho rho = CutoffRho::bump(c.d, c.rho_radius * c.L);
    const CutoffRho chi = CutoffRho::bump(c.d, c.chi_radius * c.L);
    int N = c.N;
    if (N == 0) {
        N = grid_points_for(c.L, 2.0 * nmax, false);
        N = resolved_points(rho, c.L, resolved_points(chi, c.L, N));
    }
    const SpectralGrid g(c.d, c.L, N);
    g.require_truncation(2.0 * nmax);
    chi.validate_for(g);
    const Field chi_s = chi.sample(g);
    const int sub = with_noise ? substeps_for_phase(c.T, c.K, nmax, c.phase_budget) : 1;
    const int Kf = c.K * sub;
    const double dt = c.T / Kf;
    const std::size_t R = c.ladder.size();
    SolverConfig scfg;
    scfg.params = p;
    scfg.rho = rho;
    scfg.phi = phi;
    scfg.T = c.T;
    scfg.K = Kf;
    scfg.picard_tol = c.picard_tol;
    scfg.picard_max = c.picard_max;
    scfg.dealias = c.dealias;
    scfg.keep_snapshots = false;
    struct Out {
        std::vector<double> diffs;
        bool failed = false;
        std::string why;
    };
    auto samples = run_ensemble(c.M, c.threads, [&](std::size_t m) {
        Out o;
        std::vector<RemainderSolver> solvers;
        std::vector<Field> v;
        for (std::size_t j = 0; j < R; ++j) {
            auto sc = scfg;
            sc.params.n = c.ladder[j];
            solvers.emplace_back(sc, g);
            v.push_back(phi ? (phi->space() == Space::frequency ? *phi : to_frequency(*phi)) : Field(g, Space::frequency));
        }
        const Field& rs = solvers.front().rho_samples();
        std::vector<PathEngine> engines;
        for (std::size_t j = 0; j < R; ++j) engines.emplace_back(g, c.ladder[j], c.alpha, dt, g);
        std::vector<StepInputs> prev;
        for (std::size_t j = 0; j < R; ++j) prev.push_back(zero_inputs(g, 0.0));
        NoiseStream s(c.seed, m, g, dt);
        Field gbuf(g, Space::frequency);
        for (int k = 1; k <= Kf && !o.failed; ++k) {
            if (with_noise) {
                s.next_into(gbuf.values());
                forward_inplace(g, gbuf.values());
            }
            for (std::size_t j = 0; j < R; ++j) {
                StepInputs next = zero_inputs(g, dt * k);
                if (with_noise) {
                    engines[j].advance(gbuf);
                    next = make_inputs(dt * k, engines[j].psi(), engines[j].ipsi2(), rs);
                }
                StepResult st = solvers[j].step(v[j], prev[j], next);
                if (st.status == SolveStatus::ok && !std::isfinite(solvers[j].h_minus_s(st.v))) st.status = SolveStatus::blowup;
                if (st.status != SolveStatus::ok) {
                    o.failed = true;
                    o.why = std::string(to_string(st.status)) + " at n=" + fmt(c.ladder[j]) + " t=" + fmt(dt * k);
                    break;
                }
                v[j] = std::move(st.v);
                prev[j] = std::move(next);
            }
        }
        if (o.failed) return o;
        std::vector<Field> u;
        for (std::size_t j = 0; j < R; ++j) {
            Field uj(g, Space::frequency);
            for (std::size_t i = 0; i < uj.size(); ++i) uj[i] = v[j][i] + prev[j].psi[i];
            u.push_back(std::move(uj));
        }
        for (std::size_t j = 0; j + 1 < R; ++j) {
            Field d(g, Space::frequency);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = u[j][i] - u[j + 1][i];
            d = to_frequency(multiply_by(to_physical(d), chi_s, 1));
            o.diffs.push_back(solvers.front().h_minus_s(d));
        }
        return o;
    });
    StudyResult r;
    r.kind = "solver_convergence";
    add_provenance(r, c);
    r.provenance.emplace_back("substeps", std::to_string(sub));
    std::size_t failed = 0;
    std::vector<double> meds;
    for (std::size_t j = 0; j + 1 < R; ++j) {
        std::vector<double> col;
        for (const auto& s : samples)
            if (!s.failed) col.push_back(s.diffs[j]);
        meds.push_back(median(col));
        const auto ms = mean_se(col);
        r.estimates.push_back({"median_chi_diff", c.ladder[j], meds.back(), 0.0});
        r.estimates.push_back({"mean_chi_diff", c.ladder[j], ms.mean, ms.se});
    }
    for (const auto& s : samples)
        if (s.failed) {
            ++failed;
            r.provenance.emplace_back("excluded", s.why);
        }
    r.estimates.push_back({"failed_realizations", 0.0, double(failed), 0.0});
    bool dec = failed < samples.size();
    for (std::size_t j = 0; j + 1 < meds.size(); ++j)
        if (!(meds[j + 1] < meds[j])) dec = false;
    r.verdicts.push_back({"median_difference_decreasing", dec, meds.empty() ? 0.0 : meds.back(),
                          "medians strictly decreasing in n", std::to_string(failed) + " realizations excluded"});
    return r;
}

inline StudyResult run_study(const StudyConfig& c) {
    switch (c.kind) {
        case StudyKind::covariance:
            return run_covariance_study(c);
        case StudyKind::renorm_rate:
            return run_renorm_study(c);
        case StudyKind::cauchy_rate:
            return run_cauchy_study(c);
        case StudyKind::smoothing:
            return run_smoothing_study(c);
        case StudyKind::hoelder:
            return run_hoelder_study(c);
        case StudyKind::solver_convergence:
            return run_solver_convergence_study(c);
        case StudyKind::white_noise:
            return run_white_noise_study(c);
        case StudyKind::wick_centering:
            return run_wick_centering_study(c);
    }
    throw ContractViolation("unknown study kind");
}

}  // namespace snls
