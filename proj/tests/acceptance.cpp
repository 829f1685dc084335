// Acceptance runner. `acceptance <k>` runs criterion k, no argument runs all.
// One line per criterion; exit status is nonzero when any selected one fails.
// Tolerances and run sizes are pinned here and nowhere else.
#include "snls/cli_io.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>

using namespace snls;
namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

int worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string num(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

// All verdicts of a study, compact.
std::string verdicts_text(const StudyResult& r) {
    std::string s;
    for (const auto& v : r.verdicts) {
        if (!s.empty()) s += "; ";
        s += v.name + "=" + num(v.measured) + (v.pass ? " ok" : " FAIL");
    }
    return s;
}

const Verdict& verdict(const StudyResult& r, const std::string& name) {
    for (const auto& v : r.verdicts)
        if (v.name == name) return v;
    throw std::runtime_error("missing verdict " + name);
}

Outcome white_noise() {
    StudyConfig c;
    c.kind = StudyKind::white_noise;
    c.d = 1;
    c.N = 128;
    c.M = 10000;
    c.threads = worker_count();
    const auto r = run_study(c);
    return {r.passed() && r.verdicts.size() == 3, verdicts_text(r) + " (tol 5% relative, 3 test functions)"};
}

Outcome covariance() {
    StudyConfig c;
    c.kind = StudyKind::covariance;
    c.d = 1;
    c.N = 256;
    c.n = 32;
    c.M = 4000;
    c.threads = worker_count();
    const auto r = run_study(c);
    const auto& v = verdict(r, "covariance_probes_within_5se");
    return {v.pass, "max z = " + num(v.measured) + " (tol 5), " + v.detail};
}

Outcome renorm() {
    bool pass = true;
    std::string detail;
    for (auto [d, alpha] : {std::pair{1, 0.3}, std::pair{2, 0.9}}) {
        StudyConfig c;
        c.kind = StudyKind::renorm_rate;
        c.d = d;
        c.alpha = alpha;
        c.ladder = {8, 16, 32, 64, 128};
        const auto r = run_study(c);
        const auto& v = verdict(r, "renorm_slope");
        pass = pass && v.pass;
        double inc = 0.0;
        for (const auto& g : r.regressions)
            if (g.label == "log_increment_vs_log_n") inc = g.fit.slope;
        detail += (detail.empty() ? "" : "; ") + std::string("d=") + std::to_string(d) + " slope " + num(v.measured) +
                  " vs " + num(d - 2.0 * alpha) + " +-0.05 (increment slope " + num(inc) + ")";
    }
    return {pass, detail};
}

Outcome wick_centering() {
    StudyConfig c;
    c.kind = StudyKind::wick_centering;
    c.d = 1;
    c.n = 16;
    c.K = 64;
    c.M = 10000;
    c.threads = worker_count();
    const auto r = run_study(c);
    const auto& v = verdict(r, "wick_cellwise_mean_zero");
    return {r.passed(), "max |z| = " + num(v.measured) + " (tol 4), " + v.detail};
}

Outcome cauchy() {
    StudyConfig c;
    c.kind = StudyKind::cauchy_rate;
    c.d = 1;
    c.alpha = 0.3;
    c.L = 32.0 * kTwoPi;  // dense frequency lattice; the decay is only n^{-2 eps}
    c.ladder = {8, 16, 32, 64};
    c.T = 0.5;
    c.K = 4;  // E|Psi_hat(T)|^2 does not depend on K
    c.M = 2000;
    c.threads = worker_count();
    const auto r = run_study(c);
    const auto& v = verdict(r, "cauchy_strictly_decreasing");
    std::string zs;
    for (const auto& e : r.estimates)
        if (e.label == "decrease_z") zs += (zs.empty() ? "" : ",") + num(e.value);
    return {v.pass, "paired z = [" + zs + "], " + v.tolerance};
}

Outcome smoothing() {
    StudyConfig c;
    c.kind = StudyKind::smoothing;
    c.d = 1;
    c.alpha = 0.3;
    c.ladder = {8, 16, 32, 64, 128};
    c.T = 0.125;  // substeps resolve the phase at 2 n_max, so cost is linear in T
    c.K = 64;
    c.M = 2000;
    c.threads = worker_count();
    const auto r = run_study(c);
    const auto& b = verdict(r, "duhamel_bounded");
    const auto& w = verdict(r, "wick_diverging");
    return {b.pass && w.pass, "Duhamel slope " + num(b.measured) + " (need <= 0.05), Wick slope " + num(w.measured) +
                                  " (need >= 0.1)"};
}

Outcome solver_sanity() {
    // L2 conservation of the free flow, rho = 0, 256 steps.
    const SpectralGrid g(1, kTwoPi, 128);
    Field phi(g, Space::frequency);
    for (int k = -30; k <= 30; ++k) phi[g.index_of_wavevector({k, 0, 0})] = cplx(1.0 / (1 + k * k), 0.5 / (3 + k * k));
    SolverConfig c;
    c.params = make_params(1, 0.3);
    c.T = 1.0;
    c.K = 256;
    c.phi = phi;
    std::vector<StepInputs> quiet;
    for (int k = 0; k <= c.K; ++k) quiet.push_back(zero_inputs(g, c.T * k / c.K));
    const auto out = RemainderSolver(c, g).solve(quiet);
    const double l2 = sobolev_norm(phi, 0.0, 2.0);
    double drift = 0.0;
    for (const auto& v : out.v) drift = std::max(drift, std::abs(sobolev_norm(v, 0.0, 2.0) - l2) / l2);
    const bool cons = out.status == SolveStatus::ok && out.v.size() == 257 && drift <= 1e-10;

    // Manufactured solution v*(t) = e^{-it} g with a matching forcing.
    const SpectralGrid gm(1, kTwoPi, 512);
    Field gf(gm, Space::frequency);
    gf[gm.index_of_wavevector({1, 0, 0})] = 0.4 * kTwoPi;
    gf[gm.index_of_wavevector({-2, 0, 0})] = cplx(0.2, -0.1) * kTwoPi;
    gf[gm.index_of_wavevector({3, 0, 0})] = 0.15 * kTwoPi;
    const auto rho = CutoffRho::bump(1, 0.375 * kTwoPi);
    const Field nl = to_frequency(quadratic_nonlinearity(to_physical(gf), rho.sample(gm), false));
    const auto xi2 = gm.xi_squared();
    const double T = 0.5;
    auto error_at = [&](int K) {
        SolverConfig s;
        s.params = make_params(1, 0.3);
        s.rho = rho;
        s.phi = gf;
        s.T = T;
        s.K = K;
        s.forcing = [&](double t, const SpectralGrid&) {
            Field f(gm, Space::frequency);
            const cplx ph = std::polar(1.0, -t);
            for (std::size_t i = 0; i < f.size(); ++i) f[i] = (1.0 + xi2[i]) * ph * gf[i] - nl[i];
            return f;
        };
        std::vector<StepInputs> in;
        for (int k = 0; k <= K; ++k) in.push_back(zero_inputs(gm, T * k / K));
        RemainderSolver solver(s, gm);
        const auto o = solver.solve(in);
        if (o.status != SolveStatus::ok) return kInf;
        Field d = *o.final_v;
        const cplx ph = std::polar(1.0, -T);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= ph * gf[i];
        return solver.h_minus_s(d);
    };
    const double e1 = error_at(32), e2 = error_at(64), e3 = error_at(128);
    const double o1 = std::log2(e1 / e2), o2 = std::log2(e2 / e3);
    const bool order = std::abs(o1 - 2.0) <= 0.2 && std::abs(o2 - 2.0) <= 0.2;
    return {cons && order, "L2 drift " + num(drift) + " (tol 1e-10); MMS orders " + num(o1) + ", " + num(o2) +
                               " (2.0 +- 0.2)"};
}

Outcome solver_convergence() {
    StudyConfig c;
    c.kind = StudyKind::solver_convergence;
    c.d = 1;
    c.alpha = 0.3;
    c.eps = 0.04;
    c.L = 8.0 * kTwoPi;
    c.T = 0.05;
    c.K = 16;
    c.ladder = {8, 16, 32, 64};
    c.M = 200;
    c.threads = worker_count();
    const auto r = run_study(c);
    const auto& v = verdict(r, "median_difference_decreasing");
    std::string meds;
    for (const auto& e : r.estimates)
        if (e.label == "median_chi_diff") meds += (meds.empty() ? "" : ",") + num(e.value);
    return {v.pass, "medians [" + meds + "], " + v.detail};
}

// value column of a constants.csv row
std::string table_value(const std::string& table, const std::string& q, int d) {
    std::istringstream in(table);
    std::string line;
    const std::string key = std::to_string(kCsvSchema) + "," + q + "," + std::to_string(d) + ",";
    while (std::getline(in, line))
        if (line.rfind(key, 0) == 0) return line.substr(key.size());
    return "<missing>";
}

Outcome constants() {
    const auto tmp = fs::temp_directory_path() / "snls_acceptance_constants";
    int bad = 0;
    std::string first;
    auto expect = [&](const std::string& got, const std::string& want, const std::string& what) {
        if (got == want) return;
        ++bad;
        if (first.empty()) first = what + " = " + got + " want " + want;
    };
    // dyadic alphas so that kappa prints exactly
    const struct {
        int d;
        double alpha;
        const char* kappa;
        const char* pair;
    } rows[] = {{1, 0.375, "0.625", "(inf,2)"}, {2, 0.875, "0.625", "(4,4)"}, {3, 1.4375, "0.5625", "(2,6)"}};
    const char* alpha_d[] = {"1/4", "5/6", "17/12"};
    const char* weak[] = {"7/20", "18/20", "29/20"};
    const char* sw_all[] = {"3/20", "1/10", "1/24"};
    for (const auto& row : rows) {
        auto pr = parse_config("d = " + std::to_string(row.d) + "\nalpha = " + csv_number(row.alpha) + "\n");
        if (!pr.ok()) return {false, "config rejected: " + pr.errors.front()};
        auto rc = *pr.config;
        rc.out_dir = tmp.string();
        const auto res = dispatch("constants", rc);
        std::ifstream f(tmp / "constants.csv", std::ios::binary);
        std::stringstream ss;
        ss << f.rdbuf();
        const std::string t = ss.str();
        expect(res.summary == t ? "same" : "differs", "same", "stdout vs constants.csv");
        expect(table_value(t, "kappa", row.d), row.kappa, "kappa d=" + std::to_string(row.d));
        expect(table_value(t, "pair", row.d), row.pair, "pair d=" + std::to_string(row.d));
        expect(table_value(t, "alpha_d", row.d), alpha_d[row.d - 1], "alpha_d d=" + std::to_string(row.d));
        for (int d = 1; d <= 3; ++d) {
            const auto ds = std::to_string(d);
            expect(table_value(t, "alpha_threshold", d), alpha_d[d - 1], "alpha_threshold d=" + ds);
            expect(table_value(t, "alpha_threshold_weak", d), weak[d - 1], "alpha_threshold_weak d=" + ds);
            expect(table_value(t, "s_weak", d), sw_all[d - 1], "s_weak d=" + ds);
        }
        expect(table_value(t, "kappa_formula", 1), "1-alpha", "kappa_formula d=1");
        expect(table_value(t, "kappa_formula", 2), "3/2-alpha", "kappa_formula d=2");
        expect(table_value(t, "kappa_formula", 3), "2-alpha if alpha>=1; 1 if alpha<1", "kappa_formula d=3");
        expect(table_value(t, "strichartz_pair", 1), "(inf,2)", "strichartz_pair d=1");
        expect(table_value(t, "strichartz_pair", 2), "(4,4)", "strichartz_pair d=2");
        expect(table_value(t, "strichartz_pair", 3), "(2,6)", "strichartz_pair d=3");
    }
    fs::remove_all(tmp);
    return {bad == 0, bad == 0 ? "all table entries exact" : std::to_string(bad) + " mismatches, first: " + first};
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Outcome reproducibility() {
    // Every dispatchable study at a small size, run twice (the second time
    // with a different worker count); every output except the resolved
    // config, which records the output path, must match byte for byte.
    const std::vector<std::pair<std::string, std::string>> runs{
        {"sample", "n = 8\nK = 8\nT = 0.1\nM = 2\n"},
        {"solve", "n = 8\nK = 8\nT = 0.05\nM = 1\nL = 6.283185307179586\n"},
        {"covariance", "n = 8\nK = 16\nM = 100\n"},
        {"renorm", ""},
        {"cauchy", "ladder = 2,4,8,16\nK = 8\nM = 100\n"},
        {"smoothing", "ladder = 2,4,8,16\nK = 8\nT = 0.1\nM = 100\n"},
        {"hoelder", "n = 8\nK = 64\nM = 100\n"},
        {"converge", "ladder = 2,4\nK = 4\nT = 0.02\nM = 100\n"},
    };
    const auto base = fs::temp_directory_path() / "snls_acceptance_repro";
    int compared = 0;
    for (const auto& [sub, extra] : runs) {
        auto pr = parse_config("d = 1\nalpha = 0.3\n" + extra);
        if (!pr.ok()) return {false, sub + ": config rejected: " + pr.errors.front()};
        std::vector<fs::path> dirs;
        for (int threads : {1, 3}) {
            auto rc = *pr.config;
            rc.study.threads = threads;
            dirs.push_back(base / (sub + "_" + std::to_string(threads)));
            fs::remove_all(dirs.back());
            rc.out_dir = dirs.back().string();
            dispatch(sub, rc);
        }
        for (const auto& e : fs::directory_iterator(dirs[0])) {
            const auto name = e.path().filename();
            if (name == "resolved_config.txt") continue;
            const auto a = read_file(e.path()), b = read_file(dirs[1] / name);
            if (a.empty() || a != b) return {false, sub + ": " + name.string() + " differs between re-runs"};
            ++compared;
        }
    }
    fs::remove_all(base);
    return {compared > 0, std::to_string(compared) + " output files byte-identical across re-runs"};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "white-noise identity", 60, white_noise},
        {2, "covariance agreement", 600, covariance},
        {3, "renormalization divergence", 60, renorm},
        {4, "Wick centering", 300, wick_centering},
        {5, "Cauchy-in-n decay", 600, cauchy},
        {6, "multilinear smoothing", 1200, smoothing},
        {7, "solver sanity", 120, solver_sanity},
        {8, "coupled solver convergence", 1800, solver_convergence},
        {9, "constants table", 10, constants},
        {10, "reproducibility", 600, reproducibility},
    };
    int only = 0;
    if (argc > 1) only = std::atoi(argv[1]);
    int failed = 0, ran = 0;
    for (const auto& c : all) {
        if (only && c.id != only) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.budget_s;
        const bool pass = o.pass && in_time;
        std::printf("CRITERION %d [%s]: %s (%s; runtime %.1f s, budget %.0f s%s)\n", c.id, c.name, pass ? "PASS" : "FAIL",
                    o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
        std::fflush(stdout);
        if (!pass) ++failed;
    }
    if (ran == 0) {
        std::fprintf(stderr, "no criterion %s\n", argv[1]);
        return 2;
    }
    return failed ? 1 : 0;
}
