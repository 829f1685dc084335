// SPDX-License-Identifier: Apache-2.0
//
// snls: batch front end for the stochastic Schrodinger studies.
//   snls <subcommand> [--config file] [--set key=value ...] [--out dir]
//        [--threads k] [--seed u64]
#include "snls/cli_io.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

int main(int argc, char** argv) {
    CLI::App app{"Spectral Monte Carlo studies of the renormalized stochastic quadratic Schrodinger equation"};
    app.require_subcommand(1);
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir;
    int threads = 0;
    std::uint64_t seed = 0;
    bool have_seed = false;
    app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "override one key, key=value (repeatable)");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { seed = s, have_seed = true; }, "base seed");
    app.fallthrough();  // subcommands inherit it, so options may follow the subcommand
    for (const auto& name : snls::subcommands()) app.add_subcommand(name);
    CLI11_PARSE(app, argc, argv);

    std::string text;
    if (!config_path.empty()) {
        std::ifstream f(config_path, std::ios::binary);
        std::ostringstream ss;
        ss << f.rdbuf();
        text = ss.str();
    }
    if (!out_dir.empty()) sets.push_back("out=" + out_dir);
    if (threads > 0) sets.push_back("threads=" + std::to_string(threads));
    if (have_seed) sets.push_back("seed=" + std::to_string(seed));

    auto parsed = snls::parse_config(text, sets);
    if (!parsed.ok()) {
        for (const auto& e : parsed.errors) std::cerr << "config error: " << e << "\n";
        return 2;
    }
    const std::string sub = app.get_subcommands().front()->get_name();
    try {
        const auto res = snls::dispatch(sub, *parsed.config);
        std::cout << res.summary;
        return res.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
