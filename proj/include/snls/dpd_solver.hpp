// SPDX-License-Identifier: Apache-2.0
//
// Remainder equation v = u - Psi, mild form
//   v(t) = e^{-it Delta} phi - i int_0^t e^{-i(t-tau)Delta} N(v)(tau) dtau + rho^2 I<Psi^2>(t),
//   N(v) = rho^2 |v|^2 + (rho conj v)(rho Psi) + (rho v) conj(rho Psi),
// stepped with an exponential trapezoid rule whose implicit endpoint is
// resolved by Picard iteration.
#pragma once

#include "snls/analytic_reference.hpp"
#include "snls/spectral_grid.hpp"
#include "snls/stochastic_objects.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace snls {

enum class SolverMode { step_local, global };

enum class SolveStatus { ok, picard_failure, blowup };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::ok:
            return "ok";
        case SolveStatus::picard_failure:
            return "picard_failure";
        case SolveStatus::blowup:
            return "blowup";
    }
    return "?";
}

/// Frequency-space source added to N(v); used for manufactured solutions.
using Forcing = std::function<Field(double t, const SpectralGrid& g)>;

struct SolverConfig {
    ModelParams params;
    CutoffRho rho = CutoffRho::zero(1);
    std::optional<Field> phi;  // either space; zero when empty
    double T = 0.5;
    int K = 256;
    double picard_tol = 1e-10;
    int picard_max = 50;
    bool dealias = false;
    SolverMode mode = SolverMode::step_local;
    double blowup_threshold = 1e8;
    bool keep_snapshots = true;
    Forcing forcing;

    double dt() const { return T / K; }
};

/// Stochastic data the remainder equation sees at one time.
struct StepInputs {
    double t = 0.0;
    Field psi;        // frequency
    Field rho_psi;    // physical
    Field rho2_ipsi;  // frequency
};

inline StepInputs zero_inputs(const SpectralGrid& g, double t) {
    return {t, Field(g, Space::frequency), Field(g, Space::physical), Field(g, Space::frequency)};
}

inline StepInputs make_inputs(double t, const Field& psi, const Field& ipsi2, const Field& rho_samples) {
    require_space(psi, Space::frequency, "make_inputs");
    require_space(ipsi2, Space::frequency, "make_inputs");
    Field rp = multiply_by(to_physical(psi), rho_samples, 1);
    Field ri = to_frequency(multiply_by(to_physical(ipsi2), rho_samples, 2));
    return {t, psi, std::move(rp), std::move(ri)};
}

inline std::vector<StepInputs> inputs_from_path(const StochasticPath& path, const CutoffRho& rho) {
    std::vector<StepInputs> out;
    if (path.psi.empty()) return out;
    const Field r = rho.sample(path.psi.front().grid());
    out.reserve(path.times.size());
    for (std::size_t k = 0; k < path.times.size(); ++k)
        out.push_back(make_inputs(path.times[k], path.psi[k], path.ipsi2[k], r));
    return out;
}

/// Zeroes every mode with some |k_a| > N/3 (2/3 rule).
inline void dealias_inplace(Field& f) {
    require_space(f, Space::frequency, "dealias");
    const auto& g = f.grid();
    const int cut = g.points_per_axis() / 3;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const auto k = g.wavevector(i);
        for (int a = 0; a < g.dim(); ++a)
            if (std::abs(k[a]) > cut) {
                f[i] = cplx{0.0, 0.0};
                break;
            }
    }
}

inline Field dealiased_physical(const Field& f) {
    Field w = f.space() == Space::frequency ? f : to_frequency(f);
    dealias_inplace(w);
    return to_physical(std::move(w));
}

/// rho^2 |v|^2 in physical space.
inline Field quadratic_nonlinearity(const Field& v, const Field& rho_samples, bool dealias) {
    require_space(v, Space::physical, "quadratic_nonlinearity");
    require_same_grid(v, rho_samples, "quadratic_nonlinearity");
    const Field vv = dealias ? dealiased_physical(v) : v;
    Field out(v.grid(), Space::physical);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double r = rho_samples[i].real();
        out[i] = cplx{r * r * std::norm(vv[i]), 0.0};
    }
    if (dealias) out = dealiased_physical(out);
    return out;
}

/// (rho conj v)(rho Psi) + (rho v) conj(rho Psi) in physical space.
inline Field cross_terms(const Field& v, const Field& rho_psi, const Field& rho_samples, bool dealias) {
    require_space(v, Space::physical, "cross_terms");
    require_space(rho_psi, Space::physical, "cross_terms");
    require_same_grid(v, rho_psi, "cross_terms");
    const Field vv = dealias ? dealiased_physical(v) : v;
    const Field pp = dealias ? dealiased_physical(rho_psi) : rho_psi;
    Field out(v.grid(), Space::physical);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const cplx rv = rho_samples[i].real() * vv[i];
        out[i] = std::conj(rv) * pp[i] + rv * std::conj(pp[i]);
    }
    if (dealias) out = dealiased_physical(out);
    return out;
}

struct NormTraces {
    std::vector<double> h_minus_s;
    std::vector<double> w_minus_s_q;
    std::vector<double> localized;
};

struct YNorms {
    double sup_h_minus_s = 0.0;
    double lp_w_minus_s_q = 0.0;
    double l_inv_eta_localized = 0.0;
    double total() const { return sup_h_minus_s + lp_w_minus_s_q + l_inv_eta_localized; }
};

struct SolverOutput {
    SolveStatus status = SolveStatus::ok;
    std::vector<double> times;
    std::vector<Field> v;  // frequency
    std::vector<Field> u;  // frequency, u = v + psi
    std::vector<int> picard_iters;
    std::vector<double> residuals;
    NormTraces traces;
    YNorms y;
    double failure_time = 0.0;
    double last_residual = 0.0;
    int contraction_violations = 0;
    int global_iterations = 0;
    std::optional<Field> final_v;
    std::optional<Field> final_u;
};

struct StepResult {
    Field v;
    SolveStatus status = SolveStatus::ok;
    int iterations = 0;
    double residual = 0.0;
    bool monotone = true;
};

class RemainderSolver {
  public:
    RemainderSolver(SolverConfig cfg, SpectralGrid grid)
        : cfg_(std::move(cfg)), grid_(std::move(grid)), rho_(grid_, Space::physical) {
        if (!(cfg_.T > 0.0) || cfg_.T > 1.0) throw DomainError("final time must satisfy 0 < T <= 1");
        if (cfg_.K < 1) throw DomainError("K must be >= 1");
        if (cfg_.picard_max < 1) throw DomainError("picard_max must be >= 1");
        if (!(cfg_.picard_tol > 0.0)) throw DomainError("picard_tol must be > 0");
        if (cfg_.rho.dim() != grid_.dim()) throw ContractViolation("cutoff dimension does not match grid");
        cfg_.rho.validate_for(grid_);
        rho_ = cfg_.rho.sample(grid_);
        const auto xi2 = grid_.xi_squared();
        weight_.resize(grid_.size());
        for (std::size_t i = 0; i < grid_.size(); ++i) weight_[i] = std::pow(1.0 + xi2[i], -cfg_.params.s);
        set_phase(cfg_.dt());
    }

    const SolverConfig& config() const { return cfg_; }
    const SpectralGrid& grid() const { return grid_; }
    const Field& rho_samples() const { return rho_; }

    /// H^{-s} norm via Parseval on frequency data.
    double h_minus_s(const Field& f) const {
        require_space(f, Space::frequency, "h_minus_s");
        double acc = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) acc += weight_[i] * std::norm(f[i]);
        return std::sqrt(acc / grid_.box_volume());
    }

    /// Frequency-space N(v) at time t (plus forcing when configured).
    Field nonlinearity(const Field& v_freq, const StepInputs& in) const {
        require_space(v_freq, Space::frequency, "nonlinearity");
        Field vw = v_freq;
        if (cfg_.dealias) dealias_inplace(vw);
        vw = to_physical(std::move(vw));
        const Field* rp = &in.rho_psi;
        std::optional<Field> rp_d;
        if (cfg_.dealias) {
            rp_d = dealiased_physical(in.rho_psi);
            rp = &*rp_d;
        }
        Field out(grid_, Space::physical);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const cplx rv = rho_[i].real() * vw[i];
            const cplx cross = std::conj(rv) * (*rp)[i];
            out[i] = cplx{std::norm(rv) + 2.0 * cross.real(), 0.0};
        }
        out = to_frequency(std::move(out));
        if (cfg_.dealias) dealias_inplace(out);
        if (cfg_.forcing) {
            const Field f = cfg_.forcing(in.t, grid_);
            require_space(f, Space::frequency, "forcing");
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += f[i];
        }
        return out;
    }

    /// One exponential-trapezoid step from (v_k, a) to time b.t.
    StepResult step(const Field& v_k, const StepInputs& a, const StepInputs& b) {
        const double h = b.t - a.t;
        if (!(h > 0.0)) throw ContractViolation("step: inputs must be strictly increasing in time");
        if (std::abs(h - h_) > 1e-14 * std::max(1.0, h)) set_phase(h);
        const Field n_a = nonlinearity(v_k, a);
        Field base(grid_, Space::frequency);
        const cplx mih2{0.0, -0.5 * h};
        for (std::size_t i = 0; i < base.size(); ++i)
            base[i] = phase_[i] * (v_k[i] - a.rho2_ipsi[i]) + mih2 * phase_[i] * n_a[i] + b.rho2_ipsi[i];
        StepResult r{v_k, SolveStatus::ok, 0, 0.0, true};
        for (std::size_t i = 0; i < r.v.size(); ++i) r.v[i] = phase_[i] * v_k[i];
        std::vector<double> history;
        Field next(grid_, Space::frequency);
        for (int it = 1; it <= cfg_.picard_max; ++it) {
            const Field n_b = nonlinearity(r.v, b);
            double acc = 0.0;
            bool finite = true;
            for (std::size_t i = 0; i < next.size(); ++i) {
                next[i] = base[i] + mih2 * n_b[i];
                const cplx diff = next[i] - r.v[i];
                acc += weight_[i] * std::norm(diff);
                if (!std::isfinite(next[i].real()) || !std::isfinite(next[i].imag())) finite = false;
            }
            std::swap(r.v, next);
            r.iterations = it;
            r.residual = std::sqrt(acc / grid_.box_volume());
            if (!finite || !std::isfinite(r.residual)) {
                r.status = SolveStatus::blowup;
                return r;
            }
            history.push_back(r.residual);
            if (r.residual <= cfg_.picard_tol) break;
        }
        for (std::size_t j = 2; j < history.size(); ++j)
            if (history[j] > history[j - 1]) r.monotone = false;
        if (r.residual > cfg_.picard_tol) r.status = SolveStatus::picard_failure;
        return r;
    }

    SolverOutput solve(const std::vector<StepInputs>& inputs) {
        if (inputs.size() != static_cast<std::size_t>(cfg_.K) + 1)
            throw ContractViolation("solve: need K + 1 input snapshots");
        for (const auto& in : inputs) {
            require_same_grid(in.psi, rho_, "solve");
            require_space(in.psi, Space::frequency, "solve");
        }
        return cfg_.mode == SolverMode::global ? solve_global(inputs) : solve_local(inputs);
    }

    /// Norm traces at one time.
    void record_norms(const Field& v, NormTraces& tr) const {
        tr.h_minus_s.push_back(h_minus_s(v));
        const double q = cfg_.params.pair.q;
        tr.w_minus_s_q.push_back(q == 2.0 ? tr.h_minus_s.back() : sobolev_norm(v, -cfg_.params.s, q));
        tr.localized.push_back(localized_norm(v, rho_, -cfg_.params.s + cfg_.params.eta));
    }

    /// Time quadratures of the traces (left Riemann sums on the uniform grid).
    YNorms y_norms(const NormTraces& tr, double h) const {
        YNorms y;
        for (double v : tr.h_minus_s) y.sup_h_minus_s = std::max(y.sup_h_minus_s, v);
        const double p = cfg_.params.pair.p;
        const std::size_t K = tr.h_minus_s.empty() ? 0 : tr.h_minus_s.size() - 1;
        if (std::isinf(p)) {
            for (double v : tr.w_minus_s_q) y.lp_w_minus_s_q = std::max(y.lp_w_minus_s_q, v);
        } else {
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) acc += h * std::pow(tr.w_minus_s_q[k], p);
            y.lp_w_minus_s_q = std::pow(acc, 1.0 / p);
        }
        const double r = 1.0 / cfg_.params.eta;
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) acc += h * std::pow(tr.localized[k], r);
        y.l_inv_eta_localized = std::pow(acc, 1.0 / r);
        return y;
    }

  private:
    void set_phase(double h) {
        h_ = h;
        const auto xi2 = grid_.xi_squared();
        phase_.resize(grid_.size());
        for (std::size_t i = 0; i < grid_.size(); ++i) phase_[i] = std::polar(1.0, h * xi2[i]);
    }

    Field initial_v() const {
        if (!cfg_.phi) return Field(grid_, Space::frequency);
        require_same_grid(*cfg_.phi, rho_, "initial data");
        return cfg_.phi->space() == Space::frequency ? *cfg_.phi : to_frequency(*cfg_.phi);
    }

    bool lost_regularity(const Field& v, double norm) const {
        if (!std::isfinite(norm) || norm > cfg_.blowup_threshold) return true;
        for (const auto& z : v.values())
            if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return true;
        return false;
    }

    void push_snapshot(SolverOutput& out, const Field& v, const StepInputs& in) const {
        Field u(grid_, Space::frequency);
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = v[i] + in.psi[i];
        out.times.push_back(in.t);
        if (cfg_.keep_snapshots) {
            out.v.push_back(v);
            out.u.push_back(u);
        }
        out.final_v = v;
        out.final_u = std::move(u);
    }

    SolverOutput solve_local(const std::vector<StepInputs>& inputs) {
        SolverOutput out;
        Field v = initial_v();
        push_snapshot(out, v, inputs.front());
        record_norms(v, out.traces);
        for (int k = 0; k < cfg_.K; ++k) {
            StepResult r = step(v, inputs[k], inputs[k + 1]);
            out.picard_iters.push_back(r.iterations);
            out.residuals.push_back(r.residual);
            if (!r.monotone) ++out.contraction_violations;
            out.last_residual = r.residual;
            if (r.status == SolveStatus::ok && lost_regularity(r.v, h_minus_s(r.v))) r.status = SolveStatus::blowup;
            if (r.status != SolveStatus::ok) {
                out.status = r.status;
                out.failure_time = inputs[k + 1].t;
                break;
            }
            v = std::move(r.v);
            push_snapshot(out, v, inputs[k + 1]);
            record_norms(v, out.traces);
        }
        out.y = y_norms(out.traces, cfg_.dt());
        return out;
    }

    // Iterates the whole-trajectory map until successive iterates agree in
    // the Y(T) distance.
    SolverOutput solve_global(const std::vector<StepInputs>& inputs) {
        const int K = cfg_.K;
        const double h = cfg_.dt();
        if (std::abs(h - h_) > 1e-14) set_phase(h);
        std::vector<Field> traj;
        traj.reserve(K + 1);
        Field w = initial_v();
        for (int k = 0; k <= K; ++k) {
            Field v(grid_, Space::frequency);
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = w[i] + inputs[k].rho2_ipsi[i];
            traj.push_back(std::move(v));
            for (std::size_t i = 0; i < w.size(); ++i) w[i] *= phase_[i];
        }
        SolverOutput out;
        const cplx mih2{0.0, -0.5 * h};
        double dist = 0.0;
        for (int it = 1; it <= cfg_.picard_max; ++it) {
            std::vector<Field> nl;
            nl.reserve(K + 1);
            for (int k = 0; k <= K; ++k) nl.push_back(nonlinearity(traj[k], inputs[k]));
            std::vector<Field> next;
            next.reserve(K + 1);
            Field acc = initial_v();
            NormTraces diff;
            for (int k = 0; k <= K; ++k) {
                if (k > 0)
                    for (std::size_t i = 0; i < acc.size(); ++i)
                        acc[i] = phase_[i] * acc[i] + mih2 * (phase_[i] * nl[k - 1][i] + nl[k][i]);
                Field v(grid_, Space::frequency);
                Field dv(grid_, Space::frequency);
                for (std::size_t i = 0; i < v.size(); ++i) {
                    v[i] = acc[i] + inputs[k].rho2_ipsi[i];
                    dv[i] = v[i] - traj[k][i];
                }
                record_norms(dv, diff);
                next.push_back(std::move(v));
            }
            dist = y_norms(diff, h).total();
            traj = std::move(next);
            out.global_iterations = it;
            if (!std::isfinite(dist)) {
                out.status = SolveStatus::blowup;
                break;
            }
            if (dist <= cfg_.picard_tol) break;
        }
        out.last_residual = dist;
        if (out.status == SolveStatus::ok && dist > cfg_.picard_tol) out.status = SolveStatus::picard_failure;
        for (int k = 0; k <= K; ++k) {
            const double nrm = h_minus_s(traj[k]);
            if (out.status == SolveStatus::ok && lost_regularity(traj[k], nrm)) {
                out.status = SolveStatus::blowup;
                out.failure_time = inputs[k].t;
                break;
            }
            push_snapshot(out, traj[k], inputs[k]);
            record_norms(traj[k], out.traces);
            if (k > 0) {
                out.picard_iters.push_back(out.global_iterations);
                out.residuals.push_back(dist);
            }
        }
        out.y = y_norms(out.traces, h);
        return out;
    }

    SolverConfig cfg_;
    SpectralGrid grid_;
    Field rho_;
    std::vector<double> weight_;
    std::vector<cplx> phase_;
    double h_ = 0.0;
};

inline SolverOutput solve(const SolverConfig& cfg, const StochasticPath& path) {
    if (path.psi.empty()) throw ContractViolation("solve: empty path");
    const SpectralGrid& g = path.psi.front().grid();
    if (path.params.d != cfg.params.d || path.params.alpha != cfg.params.alpha)
        throw ContractViolation("solve: path and solver parameters differ");
    if (std::abs(path.times.back() - cfg.T) > 1e-12 * cfg.T || path.times.size() != std::size_t(cfg.K) + 1)
        throw ContractViolation("solve: path time grid does not match the solver time grid");
    RemainderSolver solver(cfg, g);
    return solver.solve(inputs_from_path(path, cfg.rho));
}

}  // namespace snls
