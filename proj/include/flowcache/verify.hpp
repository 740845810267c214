// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "flowcache/armodel.hpp"
#include "flowcache/chunkcache.hpp"
#include "flowcache/kvcache.hpp"
#include "flowcache/numerics.hpp"
#include "flowcache/random.hpp"
#include "flowcache/schedule.hpp"

namespace flowcache {

struct Check {
    std::string name;
    double measured = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::string detail;
};

struct SuiteResult {
    std::string suite;
    std::vector<Check> checks;

    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    }
};

/// L1_rel per local step of one chunk driven by the exact ideal velocity.
inline std::vector<double> ideal_metric_series(const SceneConfig& scene, const PowerLawSchedule& schedule, int chunk) {
    ChunkState ch = make_chunk(scene, chunk);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(schedule.steps()));
    for (int j = 0; j < schedule.steps(); ++j) {
        const double dt = schedule.dt_at(j);
        const Tensor v = ideal_velocity(ch.latent, ch.x0, schedule, schedule.time_at(j));
        out.push_back(relative_l1(v, dt, ch.latent));
        ch.latent = euler_step(ch.latent, v, dt);
    }
    return out;
}

/// Largest drop between adjacent entries (0 for a non-decreasing series).
inline double max_decrease(const std::vector<double>& series) {
    double worst = 0.0;
    for (std::size_t i = 1; i < series.size(); ++i)
        worst = std::max(worst, series[i - 1] - series[i]);
    return worst;
}

inline Check theorem_check(double p, int steps, int chunks, const SceneConfig& base) {
    SceneConfig scene = base;
    scene.chunks = chunks;
    scene.window = 1;
    const PowerLawSchedule schedule(p, 1.0, steps);
    double worst = 0.0;
    int worst_chunk = 0;
    for (int i = 1; i <= chunks; ++i) {
        const double d = max_decrease(ideal_metric_series(scene, schedule, i));
        if (d > worst) {
            worst = d;
            worst_chunk = i;
        }
    }
    Check c;
    c.name = "monotone p=" + std::to_string(p).substr(0, 4) + " steps=" + std::to_string(steps);
    c.measured = worst;
    c.tolerance = 1e-9;
    c.passed = worst <= c.tolerance;
    c.detail = worst > 0.0 ? "largest drop in chunk " + std::to_string(worst_chunk) : "non-decreasing";
    return c;
}

inline SuiteResult suite_theorem(const SceneConfig& base = {}) {
    SuiteResult r{"theorem", {}};
    for (double p : {1.0, 2.0})
        for (int steps : {64, 256})
            r.checks.push_back(theorem_check(p, steps, 16, base));
    return r;
}

/// Smallest relative gap between the metrics of any two chunks whose clean
/// norms differ by at least `min_norm_gap`, over intermediate grid points.
inline Check corollary_check(double p, int steps, int chunks, double min_norm_gap, const SceneConfig& base) {
    SceneConfig scene = base;
    scene.chunks = chunks;
    scene.window = 1;
    const PowerLawSchedule schedule(p, 1.0, steps);
    std::vector<std::vector<double>> series;
    std::vector<double> norms;
    for (int i = 1; i <= chunks; ++i) {
        series.push_back(ideal_metric_series(scene, schedule, i));
        norms.push_back(l1_norm(make_clean_latent(scene, i)));
    }
    double smallest = std::numeric_limits<double>::infinity();
    int pairs = 0;
    for (int a = 0; a < chunks; ++a) {
        for (int b = a + 1; b < chunks; ++b) {
            const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
            if (std::abs(norms[ua] - norms[ub]) / std::min(norms[ua], norms[ub]) < min_norm_gap)
                continue;
            ++pairs;
            for (int j = 1; j < steps; ++j) {
                const double x = series[ua][static_cast<std::size_t>(j)], y = series[ub][static_cast<std::size_t>(j)];
                smallest = std::min(smallest, std::abs(x - y) / std::max(std::abs(x), std::abs(y)));
            }
        }
    }
    Check c;
    c.name = "distinct metrics p=" + std::to_string(p).substr(0, 4) + " steps=" + std::to_string(steps);
    c.measured = smallest;
    c.tolerance = 1e-6;
    c.passed = pairs > 0 && smallest > c.tolerance;
    c.detail = std::to_string(pairs) + " chunk pairs with norm gap >= 5%";
    return c;
}

inline SuiteResult suite_corollary(const SceneConfig& base = {}) {
    SuiteResult r{"corollary", {}};
    for (double p : {0.25, 1.0})
        r.checks.push_back(corollary_check(p, 64, 16, 0.05, base));
    return r;
}

/// Plain reading of the threshold rule, kept separate from decide().
inline std::vector<Decision> interpret_reuse_rule(const std::vector<double>& metrics, double eps, int m) {
    std::vector<Decision> out;
    double f = 0.0;
    for (std::size_t j = 0; j < metrics.size(); ++j) {
        if (static_cast<int>(j) < m || f + metrics[j] > eps)
            f = 0.0, out.push_back({Action::compute, metrics[j], 0.0});
        else
            f += metrics[j], out.push_back({Action::reuse, metrics[j], f});
    }
    return out;
}

/// Random metric streams; element 0 is +inf, which is what estimate_metric
/// reports before anything is cached.
inline Check policy_check(int streams, std::uint64_t seed) {
    Rng rng(seed);
    int mismatched = 0;
    long decisions = 0;
    for (int s = 0; s < streams; ++s) {
        PolicyConfig policy;
        policy.epsilon = rng.uniform(0.0, 0.1);
        policy.warmup = static_cast<int>(rng.next_u64() % 11);
        const std::size_t len = 1 + rng.next_u64() % 128;
        std::vector<double> metrics(len);
        metrics[0] = std::numeric_limits<double>::infinity();
        for (std::size_t j = 1; j < len; ++j)
            metrics[j] = rng.uniform(0.0, 0.04);
        const auto expected = interpret_reuse_rule(metrics, policy.epsilon, policy.warmup);
        double f = 0.0;
        bool ok = true;
        for (std::size_t j = 0; j < len; ++j) {
            const Decision d = decide(policy, static_cast<int>(j), f, metrics[j], j > 0);
            f = d.f;
            ++decisions;
            if (d.action != expected[j].action || d.f != expected[j].f)
                ok = false;
        }
        mismatched += ok ? 0 : 1;
    }
    Check c;
    c.name = "decisions match direct interpreter";
    c.measured = mismatched;
    c.tolerance = 0.0;
    c.passed = mismatched == 0;
    c.detail = std::to_string(streams) + " streams, " + std::to_string(decisions) + " decisions";
    return c;
}

inline SuiteResult suite_policy() { return {"policy", {policy_check(1000, 7)}}; }

inline Tensor random_tensor(Rng& rng, Shape shape) {
    std::vector<double> data(shape_size(shape));
    for (double& v : data)
        v = rng.normal();
    return Tensor(std::move(shape), std::move(data));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw InvalidComparison("max_abs_diff: shapes differ");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

inline Check kvequiv_check(int instances, std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int n = 0; n < instances; ++n) {
        const std::size_t lk = 2 + rng.next_u64() % 511;
        const std::size_t d = 1 + rng.next_u64() % 64;
        const std::size_t heads = 1 + rng.next_u64() % 8;
        const Tensor keys = random_tensor(rng, {lk, heads, d});
        worst = std::max(worst, max_abs_diff(redundancy_fast(keys), redundancy_naive(keys)));
    }
    Check c;
    c.name = "fast vs naive redundancy";
    c.measured = worst;
    c.tolerance = 1e-9;
    c.passed = worst < c.tolerance;
    c.detail = std::to_string(instances) + " instances";
    return c;
}

inline SuiteResult suite_kvequiv() { return {"kvequiv", {kvequiv_check(100, 11)}}; }

inline SuiteResult suite_kernels() {
    SuiteResult r{"kernels", {}};
    Rng rng(42);

    double sum_err = 0.0;
    for (int n = 0; n < 100; ++n) {
        std::vector<double> x(1 + rng.next_u64() % 64);
        for (double& v : x)
            v = rng.uniform(-1000.0, 1000.0);
        softmax_inplace(x);
        sum_err = std::max(sum_err, std::abs(std::accumulate(x.begin(), x.end(), 0.0) - 1.0));
    }
    r.checks.push_back({"softmax sums to one", sum_err, 1e-12, sum_err <= 1e-12, "100 vectors, |x| <= 1e3"});

    int pool_bad = 0;
    for (int n = 0; n < 100; ++n) {
        std::vector<double> x(1 + rng.next_u64() % 64);
        for (double& v : x)
            v = rng.uniform(-1.0, 1.0);
        const std::size_t kernel = 2 * (rng.next_u64() % 4) + 1;
        const auto pooled = maxpool1d(x, kernel);
        const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
        for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(x.size()); ++j) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::ptrdiff_t o = -half; o <= half; ++o)
                if (j + o >= 0 && j + o < static_cast<std::ptrdiff_t>(x.size()))
                    m = std::max(m, x[static_cast<std::size_t>(j + o)]);
            pool_bad += pooled[static_cast<std::size_t>(j)] == m ? 0 : 1;
        }
    }
    r.checks.push_back({"maxpool matches window scan", double(pool_bad), 0.0, pool_bad == 0, "100 vectors"});

    int topk_bad = 0;
    for (int n = 0; n < 100; ++n) {
        std::vector<double> s(1 + rng.next_u64() % 256);
        for (double& v : s)
            v = std::round(rng.uniform(0.0, 8.0));  // coarse values force ties
        const std::size_t k = 1 + rng.next_u64() % s.size();
        std::vector<std::size_t> order(s.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
        order.resize(k);
        std::sort(order.begin(), order.end());
        topk_bad += stable_topk(s, k) == order ? 0 : 1;
    }
    r.checks.push_back({"top-k matches full sort", double(topk_bad), 0.0, topk_bad == 0, "100 score vectors with ties"});

    double imp_err = 0.0;
    for (int n = 0; n < 20; ++n) {
        const std::size_t lq = 8, lk = 16, hk = 2, hq = 4, d = 4;
        const Tensor q = random_tensor(rng, {lq, hq, d});
        const Tensor keys = random_tensor(rng, {lk, hk, d});
        const Tensor imp = importance(q, keys, lq);
        for (std::size_t h = 0; h < hk; ++h) {
            std::vector<double> acc(lk, 0.0);
            for (std::size_t g = h * (hq / hk); g < (h + 1) * (hq / hk); ++g) {
                for (std::size_t i = 0; i < lq; ++i) {
                    std::vector<double> logit(lk);
                    for (std::size_t j = 0; j < lk; ++j) {
                        double s = 0.0;
                        for (std::size_t e = 0; e < d; ++e)
                            s += q[(i * hq + g) * d + e] * keys[(j * hk + h) * d + e];
                        logit[j] = s / std::sqrt(double(d));
                    }
                    const double mx = *std::max_element(logit.begin(), logit.end());
                    double z = 0.0;
                    for (double& v : logit)
                        z += (v = std::exp(v - mx));
                    for (std::size_t j = 0; j < lk; ++j)
                        acc[j] += logit[j] / z / double(lq * (hq / hk));
                }
            }
            for (std::size_t j = 0; j < lk; ++j)
                imp_err = std::max(imp_err, std::abs(acc[j] - imp[h * lk + j]));
        }
    }
    r.checks.push_back({"importance matches attention loop", imp_err, 1e-10, imp_err < 1e-10, "20 instances"});
    return r;
}

inline std::vector<std::string> suite_names() { return {"theorem", "corollary", "kernels", "policy", "kvequiv"}; }

inline SuiteResult run_suite(const std::string& name) {
    if (name == "theorem")
        return suite_theorem();
    if (name == "corollary")
        return suite_corollary();
    if (name == "kernels")
        return suite_kernels();
    if (name == "policy")
        return suite_policy();
    if (name == "kvequiv")
        return suite_kvequiv();
    throw InvalidInput("unknown suite '" + name + "'");
}

}  // namespace flowcache
