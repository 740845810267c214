// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flowcache/config.hpp"
#include "flowcache/metrics.hpp"
#include "flowcache/simulator.hpp"

namespace flowcache {

inline std::vector<std::string> sweep_axes() { return {"lambda", "budget", "granularity", "epsilon"}; }

inline std::vector<std::string> default_sweep_values(const std::string& axis) {
    if (axis == "lambda")
        return {"0.03", "0.07", "0.15", "0.20"};
    if (axis == "budget")
        return {"8", "7", "6", "5"};
    if (axis == "granularity")
        return {"token:token", "token:frame", "token:chunk", "frame:token"};
    if (axis == "epsilon")
        return {"0", "0.005", "0.01", "0.015", "0.02"};
    throw InvalidInput("unknown sweep axis '" + axis + "'");
}

struct SweepPoint {
    std::string label;
    double order_key = 0.0;  // numeric axes sort by value
    RunConfig config;
};

struct SweepRow {
    std::string value;
    double reuse_fraction = 0.0;
    double error_vs_baseline = 0.0;
    double speedup = 1.0;
    std::size_t peak_kv_tokens = 0;
    double retained_importance = 1.0;  // mean over compression events
};

namespace detail {

inline double parse_axis_real(const std::string& s, const std::string& axis) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size())
            return v;
    } catch (const std::exception&) {
    }
    throw InvalidConfig(axis + ": bad value '" + s + "'");
}

}  // namespace detail

inline SweepPoint make_sweep_point(const RunConfig& base, const std::string& axis, const std::string& value) {
    SweepPoint pt{value, 0.0, base};
    RunConfig& c = pt.config;
    if (axis == "lambda") {
        c.kv.lambda = pt.order_key = detail::parse_axis_real(value, "kv.lambda");
    } else if (axis == "budget") {
        const double v = detail::parse_axis_real(value, "kv.budget_chunks");
        if (v < 1.0 || v != static_cast<double>(static_cast<std::size_t>(v)))
            throw InvalidConfig("kv.budget_chunks: bad value '" + value + "'");
        c.kv.budget_chunks = static_cast<std::size_t>(v);
        c.kv.compression = true;
        pt.order_key = v;
    } else if (axis == "granularity") {
        const auto colon = value.find(':');
        if (colon == std::string::npos)
            throw InvalidConfig("kv granularity: expected query:key, got '" + value + "'");
        c.kv.query_granularity = parse_query_granularity(value.substr(0, colon), "kv.query_granularity");
        c.kv.key_granularity = parse_key_granularity(value.substr(colon + 1), "kv.key_granularity");
    } else if (axis == "epsilon") {
        c.policy.rule.epsilon = pt.order_key = detail::parse_axis_real(value, "policy.epsilon");
        c.policy.enabled = true;
    } else {
        throw InvalidInput("unknown sweep axis '" + axis + "'");
    }
    c.validate();
    return pt;
}

inline SweepRow evaluate_sweep_point(const SweepPoint& pt) {
    RunConfig baseline_cfg = pt.config;
    baseline_cfg.policy.enabled = true;
    baseline_cfg.policy.rule.epsilon = 0.0;
    const RunOutput run = simulate(pt.config);
    const RunOutput base = simulate(baseline_cfg);
    SweepRow row;
    row.value = pt.label;
    row.reuse_fraction = run.trace.totals.reuse_fraction();
    row.error_vs_baseline = max_relative_error(run.final_latents, base.final_latents);
    row.speedup = speedup(run.trace, base.trace);
    row.peak_kv_tokens = run.trace.totals.peak_resident_tokens;
    double imp = 0.0;
    int events = 0;
    for (const StepRecord& s : run.trace.steps)
        for (const CompressionEvent& e : s.compressions)
            if (e.phase == "compress")
                imp += e.retained_importance, ++events;
    row.retained_importance = events == 0 ? 1.0 : imp / events;
    return row;
}

/// Worker count: FLOWCACHE_SIM_THREADS caps the hardware concurrency.
inline std::size_t sweep_threads(std::size_t points) {
    std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("FLOWCACHE_SIM_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || cap < 1)
            throw InvalidConfig("FLOWCACHE_SIM_THREADS: expected a positive integer, got '" + std::string(env) + "'");
        n = std::min(n, static_cast<std::size_t>(cap));
    }
    return std::max<std::size_t>(1, std::min(n, points));
}

/// One isolated run (plus its eps=0 baseline) per axis value. Rows come
/// back ordered by axis value whatever order the workers finish in.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, const std::string& axis,
                                       const std::vector<std::string>& values, std::size_t threads) {
    if (values.empty())
        throw InvalidInput("sweep: empty value list");
    std::vector<SweepPoint> points;
    for (const std::string& v : values)
        points.push_back(make_sweep_point(base, axis, v));
    if (axis == "granularity")
        std::stable_sort(points.begin(), points.end(),
                         [](const SweepPoint& a, const SweepPoint& b) { return a.label < b.label; });
    else
        std::stable_sort(points.begin(), points.end(),
                         [](const SweepPoint& a, const SweepPoint& b) { return a.order_key < b.order_key; });

    std::vector<SweepRow> rows(points.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < points.size(); i = next++) {
            try {
                rows[i] = evaluate_sweep_point(points[i]);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::max<std::size_t>(1, threads); ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& th : pool)
        th.join();
    if (failure)
        std::rethrow_exception(failure);
    return rows;
}

inline std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "schema_version,axis,value,reuse_fraction,error_vs_baseline,speedup,peak_kv_tokens,retained_importance\n";
    for (const SweepRow& r : rows)
        os << trace_schema_version << ',' << axis << ',' << r.value << ',' << detail::fmt_double(r.reuse_fraction)
           << ',' << detail::fmt_double(r.error_vs_baseline) << ',' << detail::fmt_double(r.speedup) << ','
           << r.peak_kv_tokens << ',' << detail::fmt_double(r.retained_importance) << '\n';
    return os.str();
}

}  // namespace flowcache
