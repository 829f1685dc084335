// SPDX-License-Identifier: Apache-2.0
//
// Periodic-box spectral substrate: grids, fields, FFTs, Fourier multipliers,
// Sobolev norms and the product-form cutoff.
//
// Transform convention (continuum-approximating):
//   forward:  F[xi] = dx^d * sum_j f(x_j) exp(-i <xi, x_j>)
//   inverse:  f(x_j) = L^-d * sum_xi F[xi] exp(+i <xi, x_j>)
// so that a lattice sum L^-d * sum_xi stands in for (2 pi)^-d * int d xi.
// Grid points are x_j = j * dx, j in [0, N) per axis; the box centre is L/2.
#pragma once

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <new>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

namespace snls {

using cplx = std::complex<double>;

class ContractViolation : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

class TagError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

class DomainError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

/// Allocator backed by fftw_malloc so every buffer satisfies the alignment
/// the FFT plans were created with.
template <class T>
struct FftwAllocator {
    using value_type = T;
    FftwAllocator() = default;
    template <class U>
    FftwAllocator(const FftwAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_array_new_length();
        void* p = fftw_malloc(n * sizeof(T));
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) noexcept { fftw_free(p); }

    template <class U>
    bool operator==(const FftwAllocator<U>&) const noexcept {
        return true;
    }
};

using CVector = std::vector<cplx, FftwAllocator<cplx>>;

inline constexpr std::size_t kDefaultPointBudget = std::size_t{1} << 24;

class SpectralGrid {
  public:
    SpectralGrid(int d, double L, int N, std::size_t point_budget = kDefaultPointBudget) {
        if (d < 1 || d > 3) throw DomainError("grid dimension must be 1, 2 or 3");
        if (!(L > 0.0) || !std::isfinite(L)) throw DomainError("box length must be positive");
        if (N < 4 || N % 2 != 0) throw DomainError("points per axis must be even and >= 4");
        std::size_t total = 1;
        for (int a = 0; a < d; ++a) {
            total *= static_cast<std::size_t>(N);
            if (total > point_budget)
                throw DomainError("grid of " + std::to_string(N) + "^" + std::to_string(d) +
                                  " points exceeds the memory budget");
        }
        auto data = std::make_shared<Data>();
        data->d = d;
        data->L = L;
        data->N = N;
        data->size = total;
        data->xi_sq.resize(total);
        const double dk = 2.0 * std::numbers::pi / L;
        for (std::size_t idx = 0; idx < total; ++idx) {
            const auto k = wavevector_of(idx, d, N);
            double s = 0.0;
            for (int a = 0; a < d; ++a) s += double(k[a]) * double(k[a]);
            data->xi_sq[idx] = dk * dk * s;
        }
        data_ = std::move(data);
    }

    int dim() const { return data_->d; }
    double length() const { return data_->L; }
    int points_per_axis() const { return data_->N; }
    std::size_t size() const { return data_->size; }
    double spacing() const { return data_->L / data_->N; }
    double cell_volume() const { return std::pow(spacing(), dim()); }
    double box_volume() const { return std::pow(length(), dim()); }
    double frequency_step() const { return 2.0 * std::numbers::pi / data_->L; }
    /// Largest per-axis frequency magnitude resolved by the grid.
    double nyquist() const { return std::numbers::pi * data_->N / data_->L; }

    /// |xi|^2 for each flat index (frequency layout).
    std::span<const double> xi_squared() const { return data_->xi_sq; }

    /// Signed integer wavevector k (xi = 2 pi k / L) of a flat index.
    std::array<int, 3> wavevector(std::size_t idx) const { return wavevector_of(idx, dim(), data_->N); }

    std::array<int, 3> unflatten(std::size_t idx) const {
        std::array<int, 3> j{0, 0, 0};
        const int N = data_->N;
        for (int a = dim() - 1; a >= 0; --a) {
            j[a] = static_cast<int>(idx % N);
            idx /= N;
        }
        return j;
    }

    std::size_t flatten(const std::array<int, 3>& j) const {
        std::size_t idx = 0;
        const int N = data_->N;
        for (int a = 0; a < dim(); ++a) idx = idx * N + static_cast<std::size_t>(((j[a] % N) + N) % N);
        return idx;
    }

    /// Flat index of an integer wavevector; wavevectors outside [-N/2, N/2) wrap.
    std::size_t index_of_wavevector(const std::array<int, 3>& k) const { return flatten(k); }

    void require_truncation(double n) const {
        if (!(n >= 0.0) || !std::isfinite(n)) throw DomainError("truncation radius must be finite and >= 0");
        if (n > nyquist() * (1.0 + 1e-12))
            throw DomainError("truncation radius " + std::to_string(n) + " exceeds the Nyquist bound " +
                              std::to_string(nyquist()));
    }

    bool operator==(const SpectralGrid& o) const {
        return data_ == o.data_ || (dim() == o.dim() && length() == o.length() && points_per_axis() == o.points_per_axis());
    }

  private:
    struct Data {
        int d = 1;
        double L = 1.0;
        int N = 4;
        std::size_t size = 4;
        std::vector<double> xi_sq;
    };

    static std::array<int, 3> wavevector_of(std::size_t idx, int d, int N) {
        std::array<int, 3> k{0, 0, 0};
        for (int a = d - 1; a >= 0; --a) {
            const int j = static_cast<int>(idx % N);
            idx /= N;
            k[a] = j < N / 2 ? j : j - N;
        }
        return k;
    }

    std::shared_ptr<const Data> data_;
};

/// Truncation-ball membership with a relative guard so lattice points lying
/// exactly on the sphere |xi| = n are kept.
inline bool inside_ball(double xi_sq, double n) { return xi_sq <= n * n * (1.0 + 1e-12); }

enum class Space { physical, frequency };

class Field {
  public:
    Field(SpectralGrid grid, Space space) : grid_(std::move(grid)), values_(grid_.size(), cplx{0.0, 0.0}), space_(space) {}
    Field(SpectralGrid grid, Space space, CVector values)
        : grid_(std::move(grid)), values_(std::move(values)), space_(space) {
        if (values_.size() != grid_.size()) throw ContractViolation("field length does not match grid size");
    }

    static Field zeros(const SpectralGrid& g, Space s) { return Field(g, s); }

    const SpectralGrid& grid() const { return grid_; }
    Space space() const { return space_; }
    std::size_t size() const { return values_.size(); }
    std::span<cplx> values() { return values_; }
    std::span<const cplx> values() const { return values_; }
    cplx& operator[](std::size_t i) { return values_[i]; }
    const cplx& operator[](std::size_t i) const { return values_[i]; }
    CVector& storage() { return values_; }

    void retag(Space s) { space_ = s; }

  private:
    SpectralGrid grid_;
    CVector values_;
    Space space_;
};

inline void require_space(const Field& f, Space s, const char* what) {
    if (f.space() != s)
        throw TagError(std::string(what) + ": expected a " + (s == Space::physical ? "physical" : "frequency") +
                       "-space field");
}

inline void require_same_grid(const Field& a, const Field& b, const char* what) {
    if (!(a.grid() == b.grid())) throw ContractViolation(std::string(what) + ": grid mismatch");
}

namespace detail {

// FFTW planning is not thread-safe; execution on fresh arrays is.
class PlanCache {
  public:
    static PlanCache& instance() {
        static PlanCache cache;
        return cache;
    }

    fftw_plan get(int d, int N, int sign) {
        std::lock_guard lock(mutex_);
        const auto key = std::make_tuple(d, N, sign);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        std::size_t total = 1;
        int dims[3] = {N, N, N};
        for (int a = 0; a < d; ++a) total *= static_cast<std::size_t>(N);
        auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * total));
        // ESTIMATE keeps the chosen algorithm, and hence every bit of output,
        // independent of machine load.
        fftw_plan p = fftw_plan_dft(d, dims, buf, buf, sign, FFTW_ESTIMATE);
        fftw_free(buf);
        if (!p) throw std::runtime_error("FFTW planning failed");
        plans_.emplace(key, p);
        return p;
    }

  private:
    PlanCache() = default;
    std::mutex mutex_;
    std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

inline fftw_complex* as_fftw(cplx* p) { return reinterpret_cast<fftw_complex*>(p); }

}  // namespace detail

/// In-place forward transform of raw grid data (physical -> frequency).
inline void forward_inplace(const SpectralGrid& g, std::span<cplx> data) {
    fftw_plan p = detail::PlanCache::instance().get(g.dim(), g.points_per_axis(), FFTW_FORWARD);
    fftw_execute_dft(p, detail::as_fftw(data.data()), detail::as_fftw(data.data()));
    const double scale = g.cell_volume();
    for (auto& v : data) v *= scale;
}

/// In-place inverse transform of raw grid data (frequency -> physical).
inline void inverse_inplace(const SpectralGrid& g, std::span<cplx> data) {
    fftw_plan p = detail::PlanCache::instance().get(g.dim(), g.points_per_axis(), FFTW_BACKWARD);
    fftw_execute_dft(p, detail::as_fftw(data.data()), detail::as_fftw(data.data()));
    const double scale = 1.0 / g.box_volume();
    for (auto& v : data) v *= scale;
}

inline Field to_frequency(Field f) {
    require_space(f, Space::physical, "to_frequency");
    forward_inplace(f.grid(), f.values());
    f.retag(Space::frequency);
    return f;
}

inline Field to_physical(Field f) {
    require_space(f, Space::frequency, "to_physical");
    inverse_inplace(f.grid(), f.values());
    f.retag(Space::physical);
    return f;
}

// ---------------------------------------------------------------------------
// Fourier multipliers

/// (1 + |xi|^2)^(order/2); order = -alpha is the Bessel potential.
struct Bessel {
    double order;
};
/// (1 + |xi|^2)^(s/2).
struct SobolevWeight {
    double s;
};
/// Indicator of the closed ball |xi| <= radius.
struct Truncation {
    double radius;
};
/// exp(i dt |xi|^2), the symbol of exp(-i dt Laplacian).
struct Propagator {
    double dt;
};

using Multiplier = std::variant<Bessel, SobolevWeight, Truncation, Propagator>;

inline void apply_multiplier_inplace(Field& f, const Multiplier& m) {
    require_space(f, Space::frequency, "apply_multiplier");
    const auto xi2 = f.grid().xi_squared();
    auto vals = f.values();
    std::visit(
        [&](const auto& op) {
            using T = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<T, Bessel> || std::is_same_v<T, SobolevWeight>) {
                double order;
                if constexpr (std::is_same_v<T, Bessel>)
                    order = op.order;
                else
                    order = op.s;
                if (!std::isfinite(order)) throw DomainError("multiplier order must be finite");
                if (order == 0.0) return;
                for (std::size_t i = 0; i < vals.size(); ++i) vals[i] *= std::pow(1.0 + xi2[i], 0.5 * order);
            } else if constexpr (std::is_same_v<T, Truncation>) {
                if (!(op.radius >= 0.0)) throw DomainError("truncation radius must be >= 0");
                for (std::size_t i = 0; i < vals.size(); ++i)
                    if (!inside_ball(xi2[i], op.radius)) vals[i] = cplx{0.0, 0.0};
            } else {
                if (!(op.dt >= 0.0) || !std::isfinite(op.dt)) throw DomainError("propagator step must be finite and >= 0");
                if (op.dt == 0.0) return;
                for (std::size_t i = 0; i < vals.size(); ++i) vals[i] *= std::polar(1.0, op.dt * xi2[i]);
            }
        },
        m);
}

inline Field apply_multiplier(Field f, const Multiplier& m) {
    apply_multiplier_inplace(f, m);
    return f;
}

// ---------------------------------------------------------------------------
// Norms and products

inline void require_finite(std::span<const cplx> v, const char* what) {
    for (const auto& z : v)
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
            throw DomainError(std::string(what) + ": non-finite value in field");
}

/// Cell-volume weighted discrete L^p norm of physical grid data.
inline double lp_norm(const SpectralGrid& g, std::span<const cplx> phys, double p) {
    if (!(p >= 2.0) || !std::isfinite(p)) throw DomainError("integrability exponent must lie in [2, inf)");
    double acc = 0.0;
    if (p == 2.0) {
        for (const auto& z : phys) acc += std::norm(z);
        return std::sqrt(acc * g.cell_volume());
    }
    for (const auto& z : phys) acc += std::pow(std::abs(z), p);
    return std::pow(acc * g.cell_volume(), 1.0 / p);
}

/// W^{s,p} norm: L^p norm of the inverse transform of the weighted coefficients.
inline double sobolev_norm(const Field& f, double s, double p) {
    if (!(p >= 2.0) || !std::isfinite(p)) throw DomainError("integrability exponent must lie in [2, inf)");
    if (!std::isfinite(s)) throw DomainError("regularity exponent must be finite");
    require_finite(f.values(), "sobolev_norm");
    const auto& g = f.grid();
    Field w = f.space() == Space::frequency ? f : to_frequency(f);
    if (p == 2.0) {
        // Parseval: ||f||_{L^2}^2 = L^-d sum |F|^2.
        const auto xi2 = g.xi_squared();
        double acc = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) acc += std::pow(1.0 + xi2[i], s) * std::norm(w[i]);
        return std::sqrt(acc / g.box_volume());
    }
    apply_multiplier_inplace(w, SobolevWeight{s});
    w = to_physical(std::move(w));
    return lp_norm(g, w.values(), p);
}

inline Field pointwise_product(const Field& f, const Field& g) {
    require_space(f, Space::physical, "pointwise_product");
    require_space(g, Space::physical, "pointwise_product");
    require_same_grid(f, g, "pointwise_product");
    Field out(f.grid(), Space::physical);
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i] * g[i];
    return out;
}

/// Copy coefficients between grids of the same box: equal integer wavevectors
/// are matched, everything else is zero. Going to a finer grid, a source
/// Nyquist coefficient is split evenly between +N/2 and -N/2; going coarser,
/// the +N/2 and -N/2 coefficients fold onto the destination Nyquist slot. Both
/// keep the trigonometric interpolant of real data real, and fine(coarse(f))
/// maps back exactly.
inline Field transfer_modes(const Field& src, const SpectralGrid& dst) {
    require_space(src, Space::frequency, "transfer_modes");
    const auto& sg = src.grid();
    if (sg.dim() != dst.dim() || sg.length() != dst.length())
        throw ContractViolation("transfer_modes: grids must share dimension and box length");
    if (sg.points_per_axis() == dst.points_per_axis()) return Field(dst, Space::frequency, CVector(src.values().begin(), src.values().end()));
    Field out(dst, Space::frequency);
    const int d = sg.dim();
    const int half_src = sg.points_per_axis() / 2;
    const int half_dst = dst.points_per_axis() / 2;
    const bool finer = half_dst > half_src;
    for (std::size_t i = 0; i < sg.size(); ++i) {
        const auto k = sg.wavevector(i);
        bool keep = true;
        int nyq_axes = 0;
        for (int a = 0; a < d; ++a) {
            if (finer && k[a] == -half_src) ++nyq_axes;
            if (!finer && (k[a] > half_dst || k[a] < -half_dst)) keep = false;
        }
        if (!keep) continue;
        if (nyq_axes == 0) {
            // index_of_wavevector wraps +N/2 onto the -N/2 slot.
            out[dst.index_of_wavevector(k)] += src[i];
            continue;
        }
        const double share = std::ldexp(1.0, -nyq_axes);
        for (int mask = 0; mask < (1 << d); ++mask) {
            auto kk = k;
            bool valid = true;
            for (int a = 0; a < d; ++a) {
                const bool flip = (mask >> a) & 1;
                if (flip && k[a] != -half_src) valid = false;
                if (flip) kk[a] = half_src;
            }
            if (valid) out[dst.index_of_wavevector(kk)] += share * src[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Product-form cutoff rho(x) = rho_1(x_1) ... rho_d(x_d), centred at L/2.

enum class ProfileKind { bump, plateau, zero };

class CutoffRho {
  public:
    /// exp(1 - 1/(1 - (x/r)^2)) on |x| < r per axis.
    static CutoffRho bump(int d, double radius) { return CutoffRho(d, ProfileKind::bump, radius, 0.0); }
    /// Identically 1 on |x| <= inner, smooth transition to 0 at |x| = outer.
    static CutoffRho plateau(int d, double inner, double outer) {
        if (!(inner >= 0.0 && inner < outer)) throw DomainError("plateau cutoff requires 0 <= inner < outer");
        return CutoffRho(d, ProfileKind::plateau, outer, inner);
    }
    static CutoffRho zero(int d) { return CutoffRho(d, ProfileKind::zero, 0.0, 0.0); }

    int dim() const { return d_; }
    ProfileKind kind() const { return kind_; }
    double support_radius() const { return radius_; }
    double inner_radius() const { return inner_; }

    /// One-dimensional profile at signed offset from the box centre.
    double profile(double offset) const {
        const double x = std::abs(offset);
        switch (kind_) {
            case ProfileKind::zero:
                return 0.0;
            case ProfileKind::bump: {
                if (x >= radius_) return 0.0;
                const double q = x / radius_;
                return std::exp(1.0 - 1.0 / (1.0 - q * q));
            }
            case ProfileKind::plateau: {
                if (x >= radius_) return 0.0;
                if (x <= inner_) return 1.0;
                auto h = [](double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; };
                const double t = (x - inner_) / (radius_ - inner_);
                return h(1.0 - t) / (h(1.0 - t) + h(t));
            }
        }
        return 0.0;
    }

    /// rho at a point given in box coordinates [0, L)^d.
    double value(std::span<const double> x, double L) const {
        double v = 1.0;
        for (int a = 0; a < d_; ++a) v *= profile(x[a] - 0.5 * L);
        return v;
    }

    /// Checks the support margin and spectral decay against a grid.
    void validate_for(const SpectralGrid& g) const {
        if (g.dim() != d_) throw ContractViolation("cutoff dimension does not match grid");
        if (kind_ == ProfileKind::zero) return;
        const double L = g.length();
        if (radius_ > 0.5 * L - L / 8.0 + 1e-12)
            throw DomainError("cutoff support must stay at least L/8 inside the box (radius <= 3L/8)");
        // Per-axis coefficients in the top eighth of the band must sit below
        // 1e-10 relative to the DC coefficient.
        const int N = g.points_per_axis();
        const double dx = g.spacing();
        std::vector<double> xs(N);
        for (int j = 0; j < N; ++j) xs[j] = profile(j * dx - 0.5 * L);
        double dc = 0.0;
        for (double v : xs) dc += v;
        if (dc <= 0.0) throw DomainError("cutoff support is not resolved by the grid");
        for (int k = (7 * N) / 16; k <= N / 2; ++k) {
            cplx acc{0.0, 0.0};
            for (int j = 0; j < N; ++j) acc += xs[j] * std::polar(1.0, -2.0 * std::numbers::pi * k * j / N);
            if (std::abs(acc) > 1e-10 * dc)
                throw DomainError("cutoff is under-resolved: spectral tail exceeds 1e-10 before the Nyquist frequency");
        }
    }

    /// Physical-space samples of rho (real), as a Field.
    Field sample(const SpectralGrid& g) const {
        if (g.dim() != d_) throw ContractViolation("cutoff dimension does not match grid");
        const int N = g.points_per_axis();
        const double dx = g.spacing();
        const double L = g.length();
        std::vector<double> axis(N);
        for (int j = 0; j < N; ++j) axis[j] = profile(j * dx - 0.5 * L);
        Field out(g, Space::physical);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const auto j = g.unflatten(i);
            double v = 1.0;
            for (int a = 0; a < d_; ++a) v *= axis[j[a]];
            out[i] = cplx{v, 0.0};
        }
        return out;
    }

    double sup() const { return kind_ == ProfileKind::zero ? 0.0 : 1.0; }

  private:
    CutoffRho(int d, ProfileKind kind, double radius, double inner) : d_(d), kind_(kind), radius_(radius), inner_(inner) {
        if (d < 1 || d > 3) throw DomainError("cutoff dimension must be 1, 2 or 3");
        if (kind != ProfileKind::zero && !(radius > 0.0)) throw DomainError("cutoff radius must be positive");
    }

    int d_;
    ProfileKind kind_;
    double radius_;
    double inner_;
};

/// Smallest N_min * 2^j points per axis on which `rho` passes validate_for.
inline int resolved_points(const CutoffRho& rho, double L, int N_min, std::size_t point_budget = kDefaultPointBudget) {
    for (int N = N_min;; N *= 2) {
        const SpectralGrid g(rho.dim(), L, N, point_budget);
        try {
            rho.validate_for(g);
            return N;
        } catch (const DomainError& e) {
            if (std::string(e.what()).find("under-resolved") == std::string::npos) throw;
        }
    }
}

/// || rho * F^-1((1+|xi|^2)^{s/2} F f) ||_{L^2}: weight first, localize after.
inline double localized_norm(const Field& f, const Field& rho_samples, double s) {
    require_space(rho_samples, Space::physical, "localized_norm");
    require_same_grid(f, rho_samples, "localized_norm");
    if (!std::isfinite(s)) throw DomainError("regularity exponent must be finite");
    require_finite(f.values(), "localized_norm");
    Field w = f.space() == Space::frequency ? f : to_frequency(f);
    apply_multiplier_inplace(w, SobolevWeight{s});
    w = to_physical(std::move(w));
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += std::norm(rho_samples[i].real() * w[i]);
    return std::sqrt(acc * f.grid().cell_volume());
}

inline double localized_norm(const Field& f, const CutoffRho& rho, double s) {
    return localized_norm(f, rho.sample(f.grid()), s);
}

}  // namespace snls
