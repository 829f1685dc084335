// SPDX-License-Identifier: Apache-2.0
//
// Space-time white noise increments on a periodic grid, drawn from a
// counter-based generator so any (seed, stream, step, cell) is addressable
// without shared state.
#pragma once

#include "snls/spectral_grid.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace snls {

/// Philox4x32-10 (Salmon et al., SC'11). Stateless: output = f(counter, key).
class Philox4x32 {
  public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kW0;
                key[1] += kW1;
            }
            ctr = single_round(ctr, key);
        }
        return ctr;
    }

  private:
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;

    static Counter single_round(const Counter& c, const Key& k) {
        const std::uint64_t p0 = std::uint64_t{kM0} * c[0];
        const std::uint64_t p1 = std::uint64_t{kM1} * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// 53-bit uniform in (0, 1]; never zero so log() is safe.
inline double to_unit_open0(std::uint64_t x) { return double((x >> 11) + 1) * 0x1.0p-53; }

class NoiseStream {
  public:
    NoiseStream(std::uint64_t seed, std::uint64_t stream_id, SpectralGrid grid, double dt)
        : seed_(seed), stream_id_(stream_id), grid_(std::move(grid)), dt_(dt) {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("noise time step must be > 0");
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    const SpectralGrid& grid() const { return grid_; }
    double dt() const { return dt_; }
    std::uint64_t step() const { return step_; }

    /// Real white-noise increment, per-cell variance dt / dx^d.
    Field next_increment() {
        Field out(grid_, Space::physical);
        fill(out.values(), step_++);
        return out;
    }

    /// Physical-space increment written into a caller buffer; advances.
    void next_into(std::span<cplx> out) { fill(out, step_++); }

    /// Increment already transformed to frequency space.
    Field next_increment_frequency() {
        Field f = next_increment();
        forward_inplace(grid_, f.values());
        f.retag(Space::frequency);
        return f;
    }

    /// Writes the increment of an arbitrary step without advancing the stream.
    void fill(std::span<cplx> out, std::uint64_t step) const {
        if (out.size() != grid_.size()) throw ContractViolation("noise buffer size mismatch");
        const double sd = std::sqrt(dt_ / grid_.cell_volume());
        const Philox4x32::Key key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
        const auto s_lo = static_cast<std::uint32_t>(stream_id_);
        const auto s_hi = static_cast<std::uint32_t>(stream_id_ >> 32);
        // The step occupies one counter word; streams beyond 2^32 steps would
        // repeat, far past any run we do.
        const auto step32 = static_cast<std::uint32_t>(step);
        const std::size_t n = out.size();
        for (std::size_t block = 0; 2 * block < n; ++block) {
            const auto r = Philox4x32::generate({static_cast<std::uint32_t>(block), step32, s_lo, s_hi}, key);
            const double u1 = to_unit_open0((std::uint64_t{r[0]} << 32) | r[1]);
            const double u2 = to_unit_open0((std::uint64_t{r[2]} << 32) | r[3]);
            const double rad = std::sqrt(-2.0 * std::log(u1));
            const double ang = 2.0 * std::numbers::pi * u2;
            out[2 * block] = cplx{sd * rad * std::cos(ang), 0.0};
            if (2 * block + 1 < n) out[2 * block + 1] = cplx{sd * rad * std::sin(ang), 0.0};
        }
    }

  private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    SpectralGrid grid_;
    double dt_;
    std::uint64_t step_ = 0;
};

/// Variance of each complex frequency coefficient of an increment: dt * L^d.
inline double mode_increment_variance(const SpectralGrid& g, double dt) {
    if (!(dt >= 0.0)) throw DomainError("time step must be >= 0");
    return dt * g.box_volume();
}

}  // namespace snls
