// SPDX-License-Identifier: Apache-2.0
//
// Configuration grammar, CSV and snapshot persistence, and the subcommand
// pipelines behind the command-line tool.
//
// Config grammar: one `key = value` per line; `#` starts a comment; blank
// lines ignored; lists are comma separated. Unknown or repeated keys are
// errors.
#pragma once

#include "snls/analytic_reference.hpp"
#include "snls/dpd_solver.hpp"
#include "snls/spectral_grid.hpp"
#include "snls/stats_harness.hpp"
#include "snls/stochastic_objects.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef SNLS_VERSION
#define SNLS_VERSION "0.0.0"
#endif

namespace snls {

inline constexpr const char* kCodeVersion = SNLS_VERSION;
inline constexpr int kCsvSchema = 1;
inline constexpr std::uint32_t kSnapshotVersion = 1;

struct RunConfig {
    StudyConfig study;
    std::string out_dir = "out";
    std::map<std::string, std::string> explicit_keys;  // as given, for the resolved dump
};

struct ParseResult {
    std::optional<RunConfig> config;
    std::vector<std::string> errors;
    bool ok() const { return config.has_value(); }
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

inline std::optional<double> to_double(const std::string& s) {
    double v = 0.0;
    const auto* b = s.data();
    const auto* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) {
        // from_chars rejects "pi"-style input; allow a trailing "pi" multiplier.
        if (s.size() > 2 && s.substr(s.size() - 2) == "pi") {
            const std::string head = trim(std::string_view(s).substr(0, s.size() - 2));
            if (head.empty()) return std::numbers::pi;
            const auto h = to_double(head.back() == '*' ? trim(head.substr(0, head.size() - 1)) : head);
            if (h) return *h * std::numbers::pi;
        }
        return std::nullopt;
    }
    return v;
}

inline std::optional<long long> to_int(const std::string& s) {
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<std::uint64_t> to_u64(const std::string& s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<std::vector<double>> to_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto v = to_double(trim(item));
        if (!v) return std::nullopt;
        out.push_back(*v);
    }
    return out;
}

inline std::optional<bool> to_bool(const std::string& s) {
    if (s == "true" || s == "on" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "off" || s == "0" || s == "no") return false;
    return std::nullopt;
}

inline std::optional<StudyKind> to_kind(const std::string& s) {
    for (auto k : {StudyKind::covariance, StudyKind::renorm_rate, StudyKind::cauchy_rate, StudyKind::smoothing,
                   StudyKind::hoelder, StudyKind::solver_convergence, StudyKind::white_noise, StudyKind::wick_centering})
        if (s == to_string(k)) return k;
    return std::nullopt;
}

}  // namespace detail

inline const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys{
        "d",          "alpha",      "eps",         "eta",        "L",           "N",        "T",
        "K",          "n",          "ladder",      "M",          "seed",        "study",    "out",
        "dealias",    "solver_mode", "threads",    "phase_budget", "rho_radius", "chi_radius", "sigma",
        "sigma_wick", "sigma_scan", "lags",        "confidence", "picard_tol",  "picard_max", "batches",
        "norm_padding"};
    return keys;
}

/// Parses `text`, applies `overrides` (key=value strings, later wins) and
/// validates the result. Every problem found is reported.
inline ParseResult parse_config(const std::string& text, const std::vector<std::string>& overrides = {}) {
    ParseResult res;
    std::map<std::string, std::pair<std::string, int>> kv;  // key -> (value, line)
    const std::set<std::string> known(known_keys().begin(), known_keys().end());
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    auto add = [&](const std::string& line, int no, bool override_ok) {
        const auto eq = line.find('=');
        const std::string where = no > 0 ? "line " + std::to_string(no) : "override";
        if (eq == std::string::npos) {
            res.errors.push_back(where + ": expected 'key = value'");
            return;
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty()) {
            res.errors.push_back(where + ": missing key before '='");
            return;
        }
        if (val.empty()) {
            res.errors.push_back(where + ": missing value for '" + key + "'");
            return;
        }
        if (!known.count(key)) {
            res.errors.push_back(where + ": unknown key '" + key + "'");
            return;
        }
        if (auto it = kv.find(key); it != kv.end() && !override_ok) {
            res.errors.push_back("duplicate key '" + key + "' on lines " + std::to_string(it->second.second) + " and " +
                                 std::to_string(no));
            return;
        }
        kv[key] = {val, no};
    };
    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        const auto hash = raw.find('#');
        const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        add(line, line_no, false);
    }
    for (const auto& o : overrides) add(detail::trim(o), 0, true);

    RunConfig rc;
    StudyConfig& c = rc.study;
    auto bad = [&](const std::string& key, const std::string& what) {
        const int no = kv[key].second;
        res.errors.push_back((no > 0 ? "line " + std::to_string(no) : std::string("override")) + ": " + key + " " + what);
    };
    auto get_d = [&](const char* key, double& dst) {
        if (!kv.count(key)) return;
        if (auto v = detail::to_double(kv[key].first); v && std::isfinite(*v))
            dst = *v;
        else
            bad(key, "must be a finite number");
    };
    auto get_i = [&](const char* key, auto& dst) {
        if (!kv.count(key)) return;
        if (auto v = detail::to_int(kv[key].first))
            dst = static_cast<std::remove_reference_t<decltype(dst)>>(*v);
        else
            bad(key, "must be an integer");
    };
    for (const auto& [k, v] : kv) rc.explicit_keys[k] = v.first;
    get_i("d", c.d);
    get_d("alpha", c.alpha);
    get_d("eps", c.eps);
    if (kv.count("eta")) {
        double e = 0.0;
        get_d("eta", e);
        c.eta = e;
    }
    get_d("L", c.L);
    get_i("N", c.N);
    get_d("T", c.T);
    get_i("K", c.K);
    get_d("n", c.n);
    if (kv.count("ladder")) {
        if (auto v = detail::to_list(kv["ladder"].first); v && !v->empty())
            c.ladder = *v;
        else
            bad("ladder", "must be a comma-separated list of numbers");
    }
    if (kv.count("M")) {
        long long m = 0;
        get_i("M", m);
        if (m < 1)
            bad("M", "must be >= 1");
        else
            c.M = static_cast<std::size_t>(m);
    }
    if (kv.count("seed")) {
        if (auto v = detail::to_u64(kv["seed"].first))
            c.seed = *v;
        else
            bad("seed", "must be an unsigned 64-bit integer");
    }
    if (kv.count("study")) {
        if (auto v = detail::to_kind(kv["study"].first))
            c.kind = *v;
        else
            bad("study", "is not a known study kind");
    }
    if (kv.count("out")) rc.out_dir = kv["out"].first;
    if (kv.count("dealias")) {
        if (auto v = detail::to_bool(kv["dealias"].first))
            c.dealias = *v;
        else
            bad("dealias", "must be true or false");
    }
    if (kv.count("solver_mode")) {
        const auto& v = kv["solver_mode"].first;
        if (v == "step_local" || v == "step-local")
            c.solver_mode = SolverMode::step_local;
        else if (v == "global")
            c.solver_mode = SolverMode::global;
        else
            bad("solver_mode", "must be step_local or global");
    }
    get_i("threads", c.threads);
    get_d("phase_budget", c.phase_budget);
    get_d("rho_radius", c.rho_radius);
    get_d("chi_radius", c.chi_radius);
    if (kv.count("sigma")) {
        double v = 0.0;
        get_d("sigma", v);
        c.sigma = v;
    }
    if (kv.count("sigma_wick")) {
        double v = 0.0;
        get_d("sigma_wick", v);
        c.sigma_wick = v;
    }
    for (const char* key : {"sigma_scan", "lags"}) {
        if (!kv.count(key)) continue;
        if (auto v = detail::to_list(kv[key].first))
            (std::string(key) == "lags" ? c.lags : c.sigma_scan) = *v;
        else
            bad(key, "must be a comma-separated list of numbers");
    }
    get_d("confidence", c.confidence);
    get_d("picard_tol", c.picard_tol);
    get_i("picard_max", c.picard_max);
    get_i("batches", c.batches);
    get_i("norm_padding", c.norm_padding);

    // Constraint checks against the model's parameter windows.
    for (auto& e : check_params(c.d, c.alpha, c.eps, c.eta, std::nullopt)) res.errors.push_back(e);
    if (!(c.L > 0.0)) res.errors.emplace_back("L must be > 0");
    if (c.N != 0 && (c.N < 4 || c.N % 2 != 0)) res.errors.emplace_back("N must be even and >= 4 (or 0 for automatic)");
    if (!(c.T > 0.0)) res.errors.emplace_back("T must be > 0");
    if (c.K < 1) res.errors.emplace_back("K must be >= 1");
    if (!(c.n >= 0.0)) res.errors.emplace_back("n must be >= 0");
    for (std::size_t i = 1; i < c.ladder.size(); ++i)
        if (!(c.ladder[i] > c.ladder[i - 1])) {
            res.errors.emplace_back("ladder must be strictly increasing");
            break;
        }
    if (c.N > 0 && c.L > 0.0) {
        const double nyq = std::numbers::pi * c.N / c.L;
        if (c.n > nyq * (1.0 + 1e-12))
            res.errors.push_back("n = " + fmt(c.n) + " exceeds the Nyquist bound pi N / L = " + fmt(nyq));
    }
    if (c.threads < 1) res.errors.emplace_back("threads must be >= 1");
    if (!(c.confidence > 0.0 && c.confidence < 1.0)) res.errors.emplace_back("confidence must lie in (0, 1)");
    if (!(c.phase_budget > 0.0)) res.errors.emplace_back("phase_budget must be > 0");
    if (!(c.rho_radius > 0.0 && c.rho_radius <= 0.375))
        res.errors.emplace_back("rho_radius must lie in (0, 0.375] (support at least L/8 inside the box)");
    if (!(c.chi_radius > 0.0 && c.chi_radius <= 0.375)) res.errors.emplace_back("chi_radius must lie in (0, 0.375]");
    if (c.picard_max < 1) res.errors.emplace_back("picard_max must be >= 1");
    if (!(c.picard_tol > 0.0)) res.errors.emplace_back("picard_tol must be > 0");
    if (res.errors.empty()) res.config = std::move(rc);
    return res;
}

/// `key = value` dump of every setting actually used, plus the code version.
inline std::string resolved_config_text(const RunConfig& rc, const std::string& subcommand) {
    const auto& c = rc.study;
    std::ostringstream os;
    auto list = [](const std::vector<double>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
        return s;
    };
    os << "# resolved configuration\n";
    os << "# code_version = " << kCodeVersion << "\n";
    os << "# subcommand = " << subcommand << "\n";
    os << "study = " << to_string(c.kind) << "\n";
    os << "d = " << c.d << "\nalpha = " << fmt(c.alpha) << "\neps = " << fmt(c.eps) << "\n";
    if (c.eta) os << "eta = " << fmt(*c.eta) << "\n";
    os << "L = " << fmt(c.L) << "\nN = " << c.N << "\nT = " << fmt(c.T) << "\nK = " << c.K << "\n";
    os << "n = " << fmt(c.n) << "\nladder = " << list(c.ladder) << "\n";
    os << "M = " << c.M << "\nseed = " << c.seed << "\n";
    os << "dealias = " << (c.dealias ? "true" : "false") << "\n";
    os << "solver_mode = " << (c.solver_mode == SolverMode::global ? "global" : "step_local") << "\n";
    os << "phase_budget = " << fmt(c.phase_budget) << "\nrho_radius = " << fmt(c.rho_radius)
       << "\nchi_radius = " << fmt(c.chi_radius) << "\n";
    if (c.sigma) os << "sigma = " << fmt(*c.sigma) << "\n";
    if (c.sigma_wick) os << "sigma_wick = " << fmt(*c.sigma_wick) << "\n";
    if (!c.sigma_scan.empty()) os << "sigma_scan = " << list(c.sigma_scan) << "\n";
    if (!c.lags.empty()) os << "lags = " << list(c.lags) << "\n";
    os << "confidence = " << fmt(c.confidence) << "\npicard_tol = " << fmt(c.picard_tol)
       << "\npicard_max = " << c.picard_max << "\nbatches = " << c.batches << "\nnorm_padding = " << c.norm_padding
       << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return out + "\"";
}

/// Study CSV columns: schema_version, section, label, x, value, se, note.
inline std::string study_csv(const StudyResult& r) {
    std::ostringstream os;
    const std::string sv = std::to_string(kCsvSchema);
    os << "schema_version,section,label,x,value,se,note\n";
    for (const auto& [k, v] : r.provenance) os << sv << ",provenance," << csv_escape(k) << ",,,," << csv_escape(v) << "\n";
    for (const auto& e : r.estimates)
        os << sv << ",estimate," << csv_escape(e.label) << "," << csv_number(e.x) << "," << csv_number(e.value) << ","
           << csv_number(e.se) << ",\n";
    for (const auto& g : r.regressions)
        os << sv << ",slope," << csv_escape(g.label) << "," << g.fit.points << "," << csv_number(g.fit.slope) << ","
           << csv_number(g.mc_se) << ",r2=" << csv_number(g.fit.r2) << " fit_se=" << csv_number(g.fit.slope_se)
           << "\n";
    for (const auto& v : r.verdicts)
        os << sv << ",verdict," << csv_escape(v.name) << "," << (v.pass ? 1 : 0) << "," << csv_number(v.measured) << ",,"
           << csv_escape(v.tolerance + (v.detail.empty() ? "" : "; " + v.detail)) << "\n";
    return os.str();
}

inline std::string verdict_summary(const StudyResult& r) {
    std::ostringstream os;
    for (const auto& v : r.verdicts)
        os << (v.pass ? "PASS " : "FAIL ") << v.name << ": measured " << csv_number(v.measured) << " (" << v.tolerance
           << ")" << (v.detail.empty() ? "" : " " + v.detail) << "\n";
    for (const auto& g : r.regressions)
        os << "slope " << g.label << " = " << csv_number(g.fit.slope) << " (mc_se " << csv_number(g.mc_se) << ", r2 "
           << csv_number(g.fit.r2) << ")\n";
    return os.str();
}

/// Norm-trace CSV: schema_version, t, H_minus_s, Wsq, localized, picard_iters, residual.
inline std::string trace_csv(const SolverOutput& out) {
    std::ostringstream os;
    os << "schema_version,t,H_minus_s,Wsq,localized,picard_iters,residual\n";
    for (std::size_t k = 0; k < out.traces.h_minus_s.size(); ++k) {
        os << kCsvSchema << "," << csv_number(out.times[k]) << "," << csv_number(out.traces.h_minus_s[k]) << ","
           << csv_number(out.traces.w_minus_s_q[k]) << "," << csv_number(out.traces.localized[k]) << ","
           << (k == 0 ? 0 : out.picard_iters[k - 1]) << "," << csv_number(k == 0 ? 0.0 : out.residuals[k - 1]) << "\n";
    }
    return os.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << s;
}

// ---------------------------------------------------------------------------
// Snapshot files. Layout (little-endian):
//   "WSNL" | u32 version | f64 d, N, L, K, T, alpha, eps, s, eta, theta, n |
//   u64 seed | u64 stream_id | for k = 0..K: psi, wick, ipsi2 as N^d (re, im) f64 pairs

namespace detail {

template <class T>
void put_le(std::string& buf, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    buf.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <class T>
T get_le(const std::string& buf, std::size_t& pos) {
    if (pos + sizeof(T) > buf.size()) throw std::runtime_error("snapshot truncated");
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), buf.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    pos += sizeof(T);
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
}

}  // namespace detail

inline std::string encode_snapshot(const StochasticPath& path) {
    if (path.psi.empty()) throw ContractViolation("encode_snapshot: empty path");
    const auto& g = path.psi.front().grid();
    const auto& p = path.params;
    std::string buf = "WSNL";
    detail::put_le<std::uint32_t>(buf, kSnapshotVersion);
    for (double v : {double(g.dim()), double(g.points_per_axis()), g.length(), double(path.times.size() - 1),
                     path.times.back(), p.alpha, p.eps, p.s, p.eta, p.theta, p.n})
        detail::put_le<double>(buf, v);
    detail::put_le<std::uint64_t>(buf, path.seed);
    detail::put_le<std::uint64_t>(buf, path.stream_id);
    for (std::size_t k = 0; k < path.times.size(); ++k)
        for (const Field* f : {&path.psi[k], &path.wick[k], &path.ipsi2[k]})
            for (const auto& z : f->values()) {
                detail::put_le<double>(buf, z.real());
                detail::put_le<double>(buf, z.imag());
            }
    return buf;
}

struct SnapshotHeader {
    std::uint32_t version = 0;
    int d = 0;
    int N = 0;
    double L = 0.0;
    int K = 0;
    double T = 0.0;
    double alpha = 0.0, eps = 0.0, s = 0.0, eta = 0.0, theta = 0.0, n = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
};

inline StochasticPath decode_snapshot(const std::string& buf, SnapshotHeader* header_out = nullptr) {
    if (buf.size() < 4 || buf.compare(0, 4, "WSNL") != 0) throw std::runtime_error("not a WSNL snapshot");
    std::size_t pos = 4;
    SnapshotHeader h;
    h.version = detail::get_le<std::uint32_t>(buf, pos);
    if (h.version != kSnapshotVersion) throw std::runtime_error("unsupported snapshot version");
    double hd[11];
    for (double& v : hd) v = detail::get_le<double>(buf, pos);
    h.d = int(hd[0]);
    h.N = int(hd[1]);
    h.L = hd[2];
    h.K = int(hd[3]);
    h.T = hd[4];
    h.alpha = hd[5];
    h.eps = hd[6];
    h.s = hd[7];
    h.eta = hd[8];
    h.theta = hd[9];
    h.n = hd[10];
    h.seed = detail::get_le<std::uint64_t>(buf, pos);
    h.stream_id = detail::get_le<std::uint64_t>(buf, pos);
    const SpectralGrid g(h.d, h.L, h.N);
    StochasticPath path;
    path.params.d = h.d;
    path.params.alpha = h.alpha;
    path.params.eps = h.eps;
    path.params.s = h.s;
    path.params.eta = h.eta;
    path.params.theta = h.theta;
    path.params.n = h.n;
    path.params.pair = default_pair(h.d);
    path.seed = h.seed;
    path.stream_id = h.stream_id;
    for (int k = 0; k <= h.K; ++k) {
        path.times.push_back(h.T * k / h.K);
        Field fs[3] = {Field(g, Space::frequency), Field(g, Space::physical), Field(g, Space::frequency)};
        for (auto& f : fs)
            for (auto& z : f.values()) {
                const double re = detail::get_le<double>(buf, pos);
                const double im = detail::get_le<double>(buf, pos);
                z = cplx{re, im};
            }
        path.psi.push_back(std::move(fs[0]));
        path.wick.push_back(std::move(fs[1]));
        path.ipsi2.push_back(std::move(fs[2]));
    }
    if (pos != buf.size()) throw std::runtime_error("snapshot has trailing bytes");
    if (header_out) *header_out = h;
    return path;
}

// ---------------------------------------------------------------------------
// Subcommands

inline std::string rational_text(Rational r) { return std::to_string(r.num) + "/" + std::to_string(r.den); }

inline std::string pair_text(StrichartzPair p) {
    auto one = [](double v) { return std::isinf(v) ? std::string("inf") : csv_number(v); };
    return "(" + one(p.p) + "," + one(p.q) + ")";
}

/// Full constants table: per-dimension thresholds and pairs plus the
/// parameter set resolved from (d, alpha, eps, eta).
inline std::string constants_table(const StudyConfig& c) {
    std::ostringstream os;
    os << "schema_version,quantity,d,value\n";
    const std::string sv = std::to_string(kCsvSchema);
    for (int d = 1; d <= 3; ++d) {
        os << sv << ",alpha_threshold," << d << "," << rational_text(alpha_threshold(d)) << "\n";
        os << sv << ",alpha_threshold_weak," << d << "," << rational_text(alpha_threshold_weak(d)) << "\n";
        os << sv << ",s_weak," << d << "," << rational_text(s_weak(d)) << "\n";
        os << sv << ",strichartz_pair," << d << "," << pair_text(default_pair(d)) << "\n";
    }
    os << sv << ",kappa_formula,1,1-alpha\n";
    os << sv << ",kappa_formula,2,3/2-alpha\n";
    os << sv << ",kappa_formula,3,2-alpha if alpha>=1; 1 if alpha<1\n";
    const auto p = make_params(c.d, c.alpha, c.eps, c.eta);
    const auto [lo, hi] = eta_window(c.d, p.s);
    os << sv << ",alpha," << c.d << "," << csv_number(p.alpha) << "\n";
    os << sv << ",eps," << c.d << "," << csv_number(p.eps) << "\n";
    os << sv << ",s," << c.d << "," << csv_number(p.s) << "\n";
    os << sv << ",eta_window_low," << c.d << "," << csv_number(lo) << "\n";
    os << sv << ",eta_window_high," << c.d << "," << csv_number(hi) << "\n";
    os << sv << ",eta," << c.d << "," << csv_number(p.eta) << "\n";
    os << sv << ",theta," << c.d << "," << csv_number(p.theta) << "\n";
    os << sv << ",kappa," << c.d << "," << csv_number(p.kappa_gain()) << "\n";
    os << sv << ",pair," << c.d << "," << pair_text(p.pair) << "\n";
    os << sv << ",alpha_d," << c.d << "," << rational_text(alpha_threshold(c.d)) << "\n";
    return os.str();
}

struct DispatchResult {
    int exit_code = 0;
    std::string summary;
};

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> v{"constants", "sample", "covariance", "renorm", "cauchy",
                                            "smoothing", "hoelder", "solve",      "converge"};
    return v;
}

/// Feasibility checks that must pass before any compute starts.
inline void preflight(const std::string& sub, const StudyConfig& c) {
    auto grid_ok = [&](double freq, bool strict = false) {
        const int N = c.N > 0 ? c.N : grid_points_for(c.L, freq, strict);
        SpectralGrid g(c.d, c.L, N);
        g.require_truncation(freq);
    };
    if (sub == "sample" || sub == "solve" || sub == "covariance" || sub == "hoelder") grid_ok(c.n);
    if (sub == "cauchy") grid_ok(2.0 * c.ladder.back());
    if (sub == "smoothing" || sub == "converge") grid_ok(2.0 * c.ladder.back());
    if (sub == "renorm") grid_ok(c.ladder.back(), true);
}

inline DispatchResult dispatch(const std::string& sub, RunConfig rc) {
    namespace fs = std::filesystem;
    StudyConfig& c = rc.study;
    if (std::find(subcommands().begin(), subcommands().end(), sub) == subcommands().end())
        throw ContractViolation("unknown subcommand '" + sub + "'");
    static const std::map<std::string, StudyKind> kinds{{"covariance", StudyKind::covariance},
                                                        {"renorm", StudyKind::renorm_rate},
                                                        {"cauchy", StudyKind::cauchy_rate},
                                                        {"smoothing", StudyKind::smoothing},
                                                        {"hoelder", StudyKind::hoelder},
                                                        {"converge", StudyKind::solver_convergence}};
    if (auto it = kinds.find(sub); it != kinds.end()) c.kind = it->second;
    preflight(sub, c);
    const fs::path out(rc.out_dir);
    fs::create_directories(out);
    write_text(out / "resolved_config.txt", resolved_config_text(rc, sub));
    DispatchResult res;
    auto finish_study = [&](const StudyResult& r, const std::string& name) {
        write_text(out / (name + ".csv"), study_csv(r));
        res.summary = verdict_summary(r);
        write_text(out / "verdict.txt", res.summary);
        res.exit_code = r.passed() ? 0 : 1;
    };
    if (sub == "constants") {
        res.summary = constants_table(c);
        write_text(out / "constants.csv", res.summary);
        return res;
    }
    if (sub == "sample" || sub == "solve") {
        const auto p = make_params(c.d, c.alpha, c.eps, c.eta, c.n);
        int N = c.N > 0 ? c.N : grid_points_for(c.L, 2.0 * c.n, false);
        if (sub == "solve" && c.N == 0) N = resolved_points(CutoffRho::bump(c.d, c.rho_radius * c.L), c.L, N);
        const SpectralGrid g(c.d, c.L, N);
        PathConfig pc{p, c.T, c.K, substeps_for_phase(c.T, c.K, c.n, c.phase_budget)};
        std::ostringstream summary;
        bool all_ok = true;
        for (std::size_t m = 0; m < c.M; ++m) {
            const StochasticPath path = build_path(pc, g, c.seed, m);
            if (sub == "sample") {
                write_text(out / ("snapshot_" + std::to_string(m) + ".wsnl"), encode_snapshot(path));
                summary << "wrote snapshot_" << m << ".wsnl (" << path.times.size() << " times, N=" << N << ")\n";
                continue;
            }
            SolverConfig sc;
            sc.params = p;
            sc.rho = CutoffRho::bump(c.d, c.rho_radius * c.L);
            sc.T = c.T;
            sc.K = c.K;
            sc.picard_tol = c.picard_tol;
            sc.picard_max = c.picard_max;
            sc.dealias = c.dealias;
            sc.mode = c.solver_mode;
            sc.keep_snapshots = false;
            const SolverOutput so = solve(sc, path);
            write_text(out / ("trace_" + std::to_string(m) + ".csv"), trace_csv(so));
            summary << "realization " << m << ": " << to_string(so.status) << ", Y(T) norms " << csv_number(so.y.sup_h_minus_s)
                    << " " << csv_number(so.y.lp_w_minus_s_q) << " " << csv_number(so.y.l_inv_eta_localized) << "\n";
            if (so.status != SolveStatus::ok) all_ok = false;
        }
        res.summary = summary.str();
        write_text(out / "verdict.txt", res.summary);
        res.exit_code = all_ok ? 0 : 1;
        return res;
    }
    finish_study(run_study(c), to_string(c.kind));
    return res;
}

}  // namespace snls
