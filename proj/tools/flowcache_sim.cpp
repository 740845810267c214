// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "flowcache/config.hpp"
#include "flowcache/metrics.hpp"
#include "flowcache/simulator.hpp"
#include "flowcache/sweep.hpp"
#include "flowcache/verify.hpp"

namespace fs = std::filesystem;
using namespace flowcache;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_check_failed = 1;
constexpr int exit_usage = 2;

struct CommonOptions {
    std::string config_path;
    std::string profile;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool print_config = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--profile", o.profile, "named profile")
        ->check(CLI::IsMember(profile_names()));
    cmd->add_option("--seed", o.seed, "scene seed");
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_flag("--print-config", o.print_config, "print the resolved config and exit");
}

RunConfig resolve_config(const CommonOptions& o) {
    nlohmann::ordered_json file = nlohmann::ordered_json::object();
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        if (!in)
            throw InvalidConfig("--config: cannot open '" + o.config_path + "'");
        try {
            file = nlohmann::ordered_json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw InvalidConfig("--config: " + std::string(e.what()));
        }
        if (!file.is_object())
            throw InvalidConfig("config: expected a JSON object");
    }
    std::string name = "magi-fast";
    if (file.contains("profile")) {
        if (!file.at("profile").is_string())
            throw InvalidConfig("profile: expected a string");
        name = file.at("profile").get<std::string>();
    }
    if (!o.profile.empty())
        name = o.profile;
    file.erase("profile");
    RunConfig c = profile_config(name);
    apply_overlay(c, file);
    if (o.seed)
        c.scene.seed = *o.seed;
    if (!o.out_dir.empty())
        c.out_dir = o.out_dir;
    c.validate();
    return c;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
}

std::string fmt(double v, const char* format = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

int cmd_run(const CommonOptions& o) {
    const RunConfig config = resolve_config(o);
    if (o.print_config) {
        std::cout << to_json(config).dump(2) << "\n";
        return exit_ok;
    }
    const RunOutput run = simulate(config);
    RunConfig baseline_cfg = config;
    baseline_cfg.policy.enabled = true;
    baseline_cfg.policy.rule.epsilon = 0.0;
    const RunOutput base = simulate(baseline_cfg);

    const fs::path dir(config.out_dir);
    fs::create_directories(dir);
    write_file(dir / "trace.json", export_trace(run.trace, ExportFormat::json));
    write_file(dir / "curves.csv", curves_csv(run.trace));
    nlohmann::ordered_json reports = nlohmann::ordered_json::array();
    for (const CompressionReport& r : run.reports)
        reports.push_back(to_json(r));
    write_file(dir / "compression.json", reports.dump(1) + "\n");

    const RunTotals& t = run.trace.totals;
    std::ostringstream rep;
    rep << "profile               " << config.profile << "\n"
        << "seed                  " << config.scene.seed << "\n"
        << "chunks x steps        " << config.scene.chunks << " x " << config.schedule.steps << " (window "
        << config.scene.window << ")\n"
        << "epsilon / warmup      " << fmt(config.policy.rule.epsilon) << " / " << config.policy.rule.warmup
        << (config.policy.enabled ? "" : " (policy disabled)") << "\n"
        << "computed / reused     " << t.computed << " / " << t.reused << "\n"
        << "reuse fraction        " << fmt(t.reuse_fraction(), "%.4f") << "\n"
        << "total flops           " << fmt(t.total_flops, "%.6e") << "\n"
        << "baseline flops        " << fmt(base.trace.totals.total_flops, "%.6e") << "\n"
        << "speedup               " << fmt(speedup(run.trace, base.trace), "%.4f") << "x\n"
        << "max error vs baseline " << fmt(max_relative_error(run.final_latents, base.final_latents), "%.3e") << "\n"
        << "peak kv tokens/head   " << t.peak_resident_tokens << "\n"
        << "peak kv bytes/head    " << fmt(t.peak_resident_bytes, "%.0f") << "\n"
        << "trace hash            " << hex64(run.trace.hash) << "\n";
    write_file(dir / "report.txt", rep.str());
    std::cout << rep.str() << "wrote " << (dir / "trace.json").string() << ", " << (dir / "curves.csv").string()
              << ", " << (dir / "report.txt").string() << "\n";
    return exit_ok;
}

int cmd_verify(const CommonOptions& o, const std::string& suite) {
    if (o.print_config) {
        std::cout << to_json(resolve_config(o)).dump(2) << "\n";
        return exit_ok;
    }
    std::vector<std::string> suites = suite.empty() ? suite_names() : std::vector<std::string>{suite};
    bool all = true;
    for (const std::string& name : suites) {
        const SuiteResult r = run_suite(name);
        for (const Check& c : r.checks) {
            std::printf("[%s] %-4s %-40s measured=%.3e tol=%.1e  %s\n", r.suite.c_str(), c.passed ? "PASS" : "FAIL",
                        c.name.c_str(), c.measured, c.tolerance, c.detail.c_str());
        }
        all = all && r.passed();
    }
    return all ? exit_ok : exit_check_failed;
}

std::vector<std::string> split_values(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, ','))
        if (!cur.empty())
            out.push_back(cur);
    return out;
}

int cmd_sweep(const CommonOptions& o, const std::string& axis, const std::string& values) {
    const RunConfig config = resolve_config(o);
    if (o.print_config) {
        std::cout << to_json(config).dump(2) << "\n";
        return exit_ok;
    }
    const auto list = values.empty() ? default_sweep_values(axis) : split_values(values);
    if (list.empty())
        throw InvalidInput("--values: empty list");
    const auto rows = run_sweep(config, axis, list, sweep_threads(list.size()));
    const std::string csv = sweep_csv(axis, rows);
    const fs::path dir(config.out_dir);
    fs::create_directories(dir);
    write_file(dir / ("sweep_" + axis + ".csv"), csv);
    std::cout << csv;
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowcache_sim: chunked flow-matching denoising with adaptive reuse and KV compression"};
    app.require_subcommand(1);

    CommonOptions run_opts, verify_opts, sweep_opts;
    std::string suite, axis, values;

    auto* run = app.add_subcommand("run", "simulate one configuration and write trace files");
    add_common(run, run_opts);

    auto* verify = app.add_subcommand("verify", "run a property suite");
    add_common(verify, verify_opts);
    verify->add_option("--suite", suite, "suite name (default: all)")->check(CLI::IsMember(suite_names()));

    auto* sweep = app.add_subcommand("sweep", "sweep one axis and print a CSV table");
    add_common(sweep, sweep_opts);
    sweep->add_option("--axis", axis, "sweep axis")->required()->check(CLI::IsMember(sweep_axes()));
    sweep->add_option("--values", values, "comma-separated axis values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (run->parsed())
            return cmd_run(run_opts);
        if (verify->parsed())
            return cmd_verify(verify_opts, suite);
        return cmd_sweep(sweep_opts, axis, values);
    } catch (const InvalidConfig& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_usage;
    } catch (const InvalidInput& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_check_failed;
    }
}
