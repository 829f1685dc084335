// SPDX-License-Identifier: Apache-2.0
//
// Per-realization construction of the truncated stochastic convolution Psi_n,
// its Wick square and the Duhamel integral of the Wick square.
#pragma once

#include "snls/analytic_reference.hpp"
#include "snls/noise_sampler.hpp"
#include "snls/spectral_grid.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace snls {

/// Psi, <Psi^2> and I<Psi^2> for one truncation radius, advanced one fine
/// step at a time from a frequency-space noise increment.
class PathEngine {
  public:
    PathEngine(SpectralGrid grid, double n, double alpha, double dt, const SpectralGrid& noise_grid)
        : grid_(std::move(grid)), n_(n), alpha_(alpha), dt_(dt), psi_(grid_, Space::frequency),
          ipsi_(grid_, Space::frequency), w_prev_(grid_, Space::frequency), wick_(grid_, Space::physical),
          scratch_(grid_, Space::frequency) {
        grid_.require_truncation(n);
        if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("time step must be > 0");
        if (noise_grid.dim() != grid_.dim() || noise_grid.length() != grid_.length())
            throw ContractViolation("noise grid must share dimension and box length with the field grid");
        const auto xi2 = grid_.xi_squared();
        phase_.resize(grid_.size());
        for (std::size_t i = 0; i < grid_.size(); ++i) {
            phase_[i] = std::polar(1.0, dt * xi2[i]);
            if (!inside_ball(xi2[i], n)) continue;
            ball_.push_back(i);
            source_.push_back(noise_grid.index_of_wavevector(grid_.wavevector(i)));
            weight_.push_back(std::pow(1.0 + xi2[i], -0.5 * alpha));
        }
        c_unit_ = renorm_constant(grid_, n, alpha, 1.0);
    }

    const SpectralGrid& grid() const { return grid_; }
    double truncation() const { return n_; }
    double alpha() const { return alpha_; }
    double dt() const { return dt_; }
    double time() const { return t_; }
    std::uint64_t steps() const { return steps_; }
    double renorm(double t) const { return t == 0.0 ? 0.0 : c_unit_ * t; }

    const Field& psi() const { return psi_; }
    const Field& wick() const { return wick_; }
    const Field& ipsi2() const { return ipsi_; }
    /// Frequency-space Wick square at the current time.
    const Field& wick_frequency() const { return w_prev_; }

    /// psi <- e^{i dt |xi|^2} psi - i (1+|xi|^2)^{-alpha/2} 1_{|xi|<=n} G.
    void evolve_psi(const Field& noise_freq) {
        require_space(noise_freq, Space::frequency, "evolve_psi");
        for (std::size_t j = 0; j < ball_.size(); ++j) {
            const std::size_t i = ball_[j];
            const cplx g = noise_freq[source_[j]];
            psi_[i] = phase_[i] * psi_[i] + cplx{weight_[j] * g.imag(), -weight_[j] * g.real()};
        }
        ++steps_;
        t_ = dt_ * double(steps_);
    }

    /// Full fine step: Psi, then the Wick square, then the trapezoid update.
    void advance(const Field& noise_freq) {
        evolve_psi(noise_freq);
        refresh_wick();
        const double h2 = 0.5 * dt_;
        for (std::size_t i = 0; i < grid_.size(); ++i) {
            const cplx rhs = phase_[i] * w_prev_[i] + scratch_[i];
            const cplx next = phase_[i] * ipsi_[i] + cplx{h2 * rhs.imag(), -h2 * rhs.real()};
            ipsi_[i] = next;
        }
        std::swap(w_prev_, scratch_);
    }

  private:
    // wick_ <- |Psi|^2 - c_n(t); scratch_ <- its transform.
    void refresh_wick() {
        auto wv = wick_.values();
        std::copy(psi_.values().begin(), psi_.values().end(), wv.begin());
        inverse_inplace(grid_, wv);
        const double c = renorm(t_);
        for (auto& z : wv) z = cplx{std::norm(z) - c, 0.0};
        auto sv = scratch_.values();
        std::copy(wv.begin(), wv.end(), sv.begin());
        forward_inplace(grid_, sv);
    }

    SpectralGrid grid_;
    double n_;
    double alpha_;
    double dt_;
    double t_ = 0.0;
    std::uint64_t steps_ = 0;
    double c_unit_ = 0.0;
    Field psi_;
    Field ipsi_;
    Field w_prev_;
    Field wick_;
    Field scratch_;
    std::vector<cplx> phase_;
    std::vector<std::size_t> ball_;
    std::vector<std::size_t> source_;
    std::vector<double> weight_;
};

/// psi_{k+1} from psi_k and one noise increment; free function form.
inline Field evolve_psi(const Field& psi, const Field& noise_freq, double n, double alpha, double dt) {
    require_space(psi, Space::frequency, "evolve_psi");
    require_space(noise_freq, Space::frequency, "evolve_psi");
    require_same_grid(psi, noise_freq, "evolve_psi");
    psi.grid().require_truncation(n);
    Field out = apply_multiplier(psi, Propagator{dt});
    const auto xi2 = psi.grid().xi_squared();
    for (std::size_t i = 0; i < out.size(); ++i)
        if (inside_ball(xi2[i], n)) out[i] += cplx{0.0, -1.0} * std::pow(1.0 + xi2[i], -0.5 * alpha) * noise_freq[i];
    return out;
}

/// |Psi|^2 - c with Psi given by its coefficients; c is the renorm constant.
inline Field wick_square(const Field& psi, double c) {
    require_space(psi, Space::frequency, "wick_square");
    Field phys = to_physical(psi);
    for (auto& z : phys.values()) z = cplx{std::norm(z) - c, 0.0};
    return phys;
}

inline Field wick_square(const Field& psi, const ModelParams& p, double t) {
    return wick_square(psi, renorm_constant(psi.grid(), p.n, p.alpha, t));
}

/// One trapezoid step of -i int e^{-i(t-tau)Delta} w(tau) dtau.
inline Field duhamel_accumulate(const Field& ipsi, const Field& w_prev, const Field& w_next, double dt) {
    require_space(ipsi, Space::frequency, "duhamel_accumulate");
    require_space(w_prev, Space::frequency, "duhamel_accumulate");
    require_space(w_next, Space::frequency, "duhamel_accumulate");
    const auto xi2 = ipsi.grid().xi_squared();
    Field out(ipsi.grid(), Space::frequency);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const cplx P = std::polar(1.0, dt * xi2[i]);
        out[i] = P * ipsi[i] + cplx{0.0, -0.5 * dt} * (P * w_prev[i] + w_next[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------

struct PathConfig {
    ModelParams params;
    double T = 0.5;
    int K = 256;
    /// Fine trapezoid steps per recorded step.
    int substeps = 1;
};

struct StochasticPath {
    ModelParams params;
    std::vector<double> times;
    std::vector<Field> psi;    // frequency
    std::vector<Field> wick;   // physical
    std::vector<Field> ipsi2;  // frequency
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
};

inline void check_path_config(const PathConfig& c) {
    if (!(c.T > 0.0) || !std::isfinite(c.T)) throw DomainError("final time must be > 0");
    if (c.K < 1) throw DomainError("K must be >= 1");
    if (c.substeps < 1) throw DomainError("substeps must be >= 1");
}

/// Smallest fine-step count per recorded step keeping dt * 4 n^2 <= budget:
/// 4 n^2 bounds the oscillation frequency seen by the Duhamel trapezoid.
inline int substeps_for_phase(double T, int K, double n, double budget) {
    if (!(budget > 0.0)) throw DomainError("phase budget must be > 0");
    const double need = T * 4.0 * n * n / (K * budget);
    return std::max(1, static_cast<int>(std::ceil(need - 1e-12)));
}

/// Drives one engine per truncation radius with a single coupled noise stream,
/// calling `on_record(k)` at every recorded time index k = 0..K.
inline void run_coupled(std::vector<PathEngine>& engines, NoiseStream& noise, int K, int substeps,
                        const std::function<void(int)>& on_record) {
    if (on_record) on_record(0);
    Field g(noise.grid(), Space::frequency);
    for (int k = 0; k < K; ++k) {
        for (int sub = 0; sub < substeps; ++sub) {
            noise.next_into(g.values());
            forward_inplace(noise.grid(), g.values());
            for (auto& e : engines) e.advance(g);
        }
        if (on_record) on_record(k + 1);
    }
}

/// Builds and records a full path on `grid`, noise drawn on `noise_grid`.
inline StochasticPath build_path(const PathConfig& cfg, const SpectralGrid& grid, const SpectralGrid& noise_grid,
                                 std::uint64_t seed, std::uint64_t stream_id) {
    check_path_config(cfg);
    const double dt = cfg.T / (double(cfg.K) * cfg.substeps);
    NoiseStream noise(seed, stream_id, noise_grid, dt);
    std::vector<PathEngine> engines;
    engines.emplace_back(grid, cfg.params.n, cfg.params.alpha, dt, noise_grid);
    StochasticPath path;
    path.params = cfg.params;
    path.seed = seed;
    path.stream_id = stream_id;
    path.times.reserve(cfg.K + 1);
    run_coupled(engines, noise, cfg.K, cfg.substeps, [&](int k) {
        const auto& e = engines.front();
        path.times.push_back(cfg.T * k / cfg.K);
        path.psi.push_back(e.psi());
        path.wick.push_back(e.wick());
        path.ipsi2.push_back(e.ipsi2());
    });
    return path;
}

inline StochasticPath build_path(const PathConfig& cfg, const SpectralGrid& grid, std::uint64_t seed,
                                 std::uint64_t stream_id) {
    return build_path(cfg, grid, grid, seed, stream_id);
}

// ---------------------------------------------------------------------------
// Localization

struct LocalizedSnapshot {
    Field rho_psi;     // physical
    Field rho2_wick;   // physical
    Field rho2_ipsi2;  // physical
};

inline Field multiply_by(const Field& phys, const Field& rho_samples, int power) {
    require_space(phys, Space::physical, "localize");
    require_same_grid(phys, rho_samples, "localize");
    Field out(phys.grid(), Space::physical);
    for (std::size_t i = 0; i < phys.size(); ++i) {
        const double r = rho_samples[i].real();
        out[i] = phys[i] * (power == 1 ? r : r * r);
    }
    return out;
}

inline LocalizedSnapshot localize(const StochasticPath& path, std::size_t k, const Field& rho_samples) {
    if (k >= path.times.size()) throw ContractViolation("localize: snapshot index out of range");
    return {multiply_by(to_physical(path.psi[k]), rho_samples, 1), multiply_by(path.wick[k], rho_samples, 2),
            multiply_by(to_physical(path.ipsi2[k]), rho_samples, 2)};
}

inline std::vector<LocalizedSnapshot> localize(const StochasticPath& path, const CutoffRho& rho) {
    if (path.psi.empty()) return {};
    rho.validate_for(path.psi.front().grid());
    const Field r = rho.sample(path.psi.front().grid());
    std::vector<LocalizedSnapshot> out;
    out.reserve(path.times.size());
    for (std::size_t k = 0; k < path.times.size(); ++k) out.push_back(localize(path, k, r));
    return out;
}

}  // namespace snls
