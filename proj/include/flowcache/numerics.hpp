// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flowcache/error.hpp"
#include "flowcache/tensor.hpp"

namespace flowcache {

inline double l1_norm(std::span<const double> x) {
    double sum = 0.0;
    for (double v : x)
        sum += std::abs(v);
    return sum;
}

inline double l1_norm(const Tensor& x) {
    if (x.empty())
        throw InvalidInput("l1_norm of an empty tensor");
    return l1_norm(x.data());
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        sum += a[i] * b[i];
    return sum;
}

/// In-place softmax over a contiguous run, max-subtracted.
inline void softmax_inplace(std::span<double> x) {
    if (x.empty())
        return;
    const double peak = *std::max_element(x.begin(), x.end());
    double total = 0.0;
    for (double& v : x) {
        v = std::exp(v - peak);
        total += v;
    }
    for (double& v : x)
        v /= total;
}

/// Softmax along `axis`. Entries along the axis are positive (up to
/// underflow of very distant logits) and sum to one.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank())
        throw InvalidInput("softmax axis " + std::to_string(axis) + " out of range for rank " +
                           std::to_string(x.rank()));
    const Shape& shape = x.shape();
    const std::size_t extent = shape[axis];
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < shape.size(); ++d)
        inner *= shape[d];
    const std::size_t outer = x.size() / (extent * inner);

    std::vector<double> out(x.data().begin(), x.data().end());
    std::vector<double> lane(extent);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            for (std::size_t e = 0; e < extent; ++e)
                lane[e] = out[base + e * inner];
            softmax_inplace(lane);
            for (std::size_t e = 0; e < extent; ++e)
                out[base + e * inner] = lane[e];
        }
    }
    return Tensor(shape, std::move(out));
}

inline void check_pool_kernel(std::size_t kernel) {
    if (kernel == 0 || kernel % 2 == 0)
        throw InvalidInput("max-pool kernel must be a positive odd integer, got " + std::to_string(kernel));
}

/// Length-preserving 1-D max pool with floor(kernel/2) padding on each side.
/// Out-of-range positions are skipped, which is the same as padding with -inf.
inline std::vector<double> maxpool1d(std::span<const double> x, std::size_t kernel) {
    check_pool_kernel(kernel);
    const std::size_t n = x.size();
    const std::size_t half = kernel / 2;
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t lo = j >= half ? j - half : 0;
        const std::size_t hi = std::min(n, j + half + 1);
        out[j] = *std::max_element(x.begin() + static_cast<std::ptrdiff_t>(lo),
                                   x.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return out;
}

inline Tensor maxpool1d(const Tensor& x, std::size_t kernel) {
    if (x.rank() != 1)
        throw InvalidInput("maxpool1d expects a vector, got shape " + shape_string(x.shape()));
    return Tensor::vector(maxpool1d(x.data(), kernel));
}

/// Indices of the k largest scores in ascending index order. Ties go to
/// the lower index, so the selection is a pure function of the scores.
inline std::vector<std::size_t> stable_topk(std::span<const double> scores, std::size_t k) {
    if (k > scores.size())
        throw InvalidInput("top-k asks for " + std::to_string(k) + " of " + std::to_string(scores.size()) +
                           " scores");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto better = [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

inline std::vector<std::size_t> stable_topk(const Tensor& scores, std::size_t k) {
    if (scores.rank() != 1)
        throw InvalidInput("stable_topk expects a vector, got shape " + shape_string(scores.shape()));
    return stable_topk(scores.data(), k);
}

}  // namespace flowcache
