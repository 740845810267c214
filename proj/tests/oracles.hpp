// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

// Reference values and slow reference implementations used as test oracles.
// Frozen numbers were produced outside this library (extended-precision
// evaluation or an independent scalar loop) and must not be regenerated
// from the code under test.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "flowcache/tensor.hpp"

namespace oracle {

// Sum of 1000 draws of (mt19937_64(42)() >> 11) * 2^-53, long double loop.
inline constexpr double l1_uniform_seed42 = 494.39382469859018265;

// softmax([1, 2, 3]), 40-digit evaluation.
inline constexpr double softmax_123[3] = {0.0900305731703804579980221, 0.2447284710547976524729596,
                                          0.6652409557748218895290183};

// (1/3)^1.5
inline constexpr double sigma_third_p15 = 0.1924500897298752548363829;

// d/dt log(t^2.5) at t = 0.7
inline constexpr double log_derivative_p25_t07 = 3.571428571428571428571429;

inline std::vector<double> window_max(const std::vector<double>& x, std::size_t kernel) {
    const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    std::vector<double> out;
    for (std::ptrdiff_t j = 0; j < n; ++j) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t i = j - half; i <= j + half; ++i)
            if (i >= 0 && i < n)
                m = std::max(m, x[static_cast<std::size_t>(i)]);
        out.push_back(m);
    }
    return out;
}

/// Full stable sort by descending score, first k, re-sorted by index.
inline std::vector<std::size_t> sorted_topk(const std::vector<double>& s, std::size_t k) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Three-loop grouped attention importance: (Hk, Lk), row-major.
inline std::vector<double> attention_importance(const flowcache::Tensor& q, const flowcache::Tensor& k,
                                                std::size_t window) {
    const std::size_t lq = q.dim(0), hq = q.dim(1), d = q.dim(2), lk = k.dim(0), hk = k.dim(1);
    const std::size_t group = hq / hk, first = lq > window ? lq - window : 0;
    std::vector<double> out(hk * lk, 0.0);
    for (std::size_t h = 0; h < hk; ++h) {
        for (std::size_t g = h * group; g < (h + 1) * group; ++g) {
            for (std::size_t i = first; i < lq; ++i) {
                std::vector<double> w(lk);
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < lk; ++j) {
                    double s = 0.0;
                    for (std::size_t e = 0; e < d; ++e)
                        s += q[(i * hq + g) * d + e] * k[(j * hk + h) * d + e];
                    w[j] = s / std::sqrt(static_cast<double>(d));
                    mx = std::max(mx, w[j]);
                }
                double z = 0.0;
                for (double& v : w)
                    z += v = std::exp(v - mx);
                for (std::size_t j = 0; j < lk; ++j)
                    out[h * lk + j] += w[j] / z / static_cast<double>((lq - first) * group);
            }
        }
    }
    return out;
}

/// Pairwise cosine loop with zero diagonal, column mean, softmax over j.
inline std::vector<double> pairwise_redundancy(const flowcache::Tensor& k) {
    const std::size_t lk = k.dim(0), hk = k.dim(1), d = k.dim(2);
    std::vector<double> out(hk * lk);
    for (std::size_t h = 0; h < hk; ++h) {
        auto row = [&](std::size_t j, std::size_t e) { return k[(j * hk + h) * d + e]; };
        std::vector<double> norm(lk, 0.0);
        for (std::size_t j = 0; j < lk; ++j) {
            for (std::size_t e = 0; e < d; ++e)
                norm[j] += row(j, e) * row(j, e);
            norm[j] = std::sqrt(norm[j]);
        }
        std::vector<double> col(lk, 0.0);
        for (std::size_t j = 0; j < lk; ++j) {
            for (std::size_t i = 0; i < lk; ++i) {
                if (i == j)
                    continue;
                double s = 0.0;
                for (std::size_t e = 0; e < d; ++e)
                    s += row(i, e) * row(j, e);
                col[j] += s / (norm[i] * norm[j]);
            }
            col[j] /= static_cast<double>(lk);
        }
        const double mx = *std::max_element(col.begin(), col.end());
        double z = 0.0;
        for (double& v : col)
            z += v = std::exp(v - mx);
        for (std::size_t j = 0; j < lk; ++j)
            out[h * lk + j] = col[j] / z;
    }
    return out;
}

/// Threshold reuse rule written out directly; true means reuse.
inline std::vector<bool> reuse_stream(const std::vector<double>& m, double eps, int warmup) {
    std::vector<bool> out;
    double f = 0.0;
    for (std::size_t j = 0; j < m.size(); ++j) {
        const bool compute = static_cast<int>(j) < warmup || f + m[j] > eps;
        f = compute ? 0.0 : f + m[j];
        out.push_back(!compute);
    }
    return out;
}

/// Fine-grid backward integration of dx/dt = (p/t)(x - x0) from t=T to 0.
inline double dense_scalar_endpoint(double x_T, double x0, double p, double T, int fine_steps) {
    double x = x_T;
    const double dt = T / fine_steps;
    for (int i = fine_steps; i >= 1; --i) {
        const double t = T * i / fine_steps;
        x -= (p / t) * (x - x0) * dt;
    }
    return x;
}

}  // namespace oracle
