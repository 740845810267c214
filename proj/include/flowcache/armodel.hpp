// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "flowcache/error.hpp"
#include "flowcache/numerics.hpp"
#include "flowcache/random.hpp"
#include "flowcache/schedule.hpp"
#include "flowcache/tensor.hpp"

namespace flowcache {

/// Latent layout of one chunk: channels, temporal length, height, width.
struct ChunkShape {
    std::size_t channels = 4;
    std::size_t frames = 4;
    std::size_t height = 8;
    std::size_t width = 8;

    Shape dims() const { return {channels, frames, height, width}; }
    std::size_t elements() const { return channels * frames * height * width; }
    std::size_t frame_tokens() const { return height * width; }
    std::size_t tokens() const { return frames * height * width; }

    friend bool operator==(const ChunkShape&, const ChunkShape&) = default;
};

struct SceneConfig {
    int chunks = 10;  // k
    int window = 4;   // l
    ChunkShape shape;
    std::uint64_t seed = 0;
    // Clean-latent L1 norms grow as base * (1 + norm_spread * (i-1)/k).
    double norm_spread = 0.5;
    // Mean |x| per element of the first chunk's clean latent.
    double data_scale = 0.25;

    void validate() const {
        if (chunks < 1)
            throw InvalidConfig("scene.k: must be >= 1");
        if (window < 1 || window > chunks)
            throw InvalidConfig("scene.l: must satisfy 1 <= l <= k");
        if (shape.channels == 0 || shape.frames == 0 || shape.height == 0 || shape.width == 0)
            throw InvalidConfig("scene.shape: every dimension must be positive");
        if (!(norm_spread > 0.0) || !std::isfinite(norm_spread))
            throw InvalidConfig("scene.norm_spread: must be a positive finite real");
        if (!(data_scale > 0.0) || !std::isfinite(data_scale))
            throw InvalidConfig("scene.data_scale: must be a positive finite real");
    }
};

/// Abstract cost units charged by the simulator; not hardware estimates.
struct CostModel {
    double flops_per_chunk_forward = 4.0e6;
    double flops_per_kv_token_pair = 1.0;
    double bytes_per_kv_token = 512.0;

    void validate() const {
        auto check = [](double v, const char* path) {
            if (!(v >= 0.0) || !std::isfinite(v))
                throw InvalidConfig(std::string(path) + ": must be a nonnegative finite real");
        };
        check(flops_per_chunk_forward, "cost.flops_per_chunk_forward");
        check(flops_per_kv_token_pair, "cost.flops_per_kv_token_pair");
        check(bytes_per_kv_token, "cost.bytes_per_kv_token");
    }
};

enum class ChunkStatus { pending, active, clean };

inline const char* to_string(ChunkStatus s) {
    switch (s) {
    case ChunkStatus::pending: return "pending";
    case ChunkStatus::active: return "active";
    case ChunkStatus::clean: return "clean";
    }
    return "?";
}

struct ChunkState {
    int index = 1;  // 1-based
    Tensor latent;
    Tensor x0;
    int local_step = 0;
    ChunkStatus status = ChunkStatus::pending;
};

/// Half-open global step interval [begin, end) during which a chunk denoises.
struct StepInterval {
    int begin = 0;
    int end = 0;

    friend bool operator==(const StepInterval&, const StepInterval&) = default;
};

inline void check_staggering(int steps, int window) {
    if (window < 1 || steps % window != 0)
        throw InvalidConfig("schedule.steps: " + std::to_string(steps) + " is not divisible by window size l=" +
                            std::to_string(window));
}

/// Chunk i enters at (i-1)*steps/l and runs exactly `steps` local steps.
inline StepInterval active_window(int chunk, int steps, int window, int chunks) {
    check_staggering(steps, window);
    if (chunk < 1 || chunk > chunks)
        throw InvalidInput("chunk index " + std::to_string(chunk) + " outside [1, " + std::to_string(chunks) + "]");
    const int begin = (chunk - 1) * (steps / window);
    return {begin, begin + steps};
}

inline int total_global_steps(int chunks, int steps, int window) {
    check_staggering(steps, window);
    return (chunks - 1) * (steps / window) + steps;
}

namespace detail {

inline std::vector<double> smooth_profile(Rng& rng, std::size_t n) {
    const double f1 = rng.uniform(0.3, 1.5);
    const double f2 = rng.uniform(1.0, 3.0);
    const double p1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double p2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double a2 = rng.uniform(0.1, 0.4);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
        out[i] = 1.0 + 0.6 * std::sin(2.0 * std::numbers::pi * f1 * x + p1) +
                 a2 * std::cos(2.0 * std::numbers::pi * f2 * x + p2);
    }
    return out;
}

enum StreamTag : std::uint64_t { clean_tag = 1, noise_tag = 2, perturb_tag = 3 };

}  // namespace detail

/// Smooth rank-2 latent (sum of outer products of 1-D profiles) scaled so
/// its L1 norm is data_scale * elements * (1 + norm_spread * (i-1)/k).
inline Tensor make_clean_latent(const SceneConfig& scene, int chunk) {
    const ChunkShape& s = scene.shape;
    Rng rng(derive_seed({scene.seed, static_cast<std::uint64_t>(chunk), detail::clean_tag}));
    std::vector<double> data(s.elements(), 0.0);
    for (int rank = 0; rank < 2; ++rank) {
        const double weight = rank == 0 ? 1.0 : rng.uniform(-0.6, 0.6);
        const auto pc = detail::smooth_profile(rng, s.channels);
        const auto pf = detail::smooth_profile(rng, s.frames);
        const auto ph = detail::smooth_profile(rng, s.height);
        const auto pw = detail::smooth_profile(rng, s.width);
        std::size_t e = 0;
        for (std::size_t c = 0; c < s.channels; ++c)
            for (std::size_t f = 0; f < s.frames; ++f)
                for (std::size_t h = 0; h < s.height; ++h)
                    for (std::size_t w = 0; w < s.width; ++w)
                        data[e++] += weight * pc[c] * pf[f] * ph[h] * pw[w];
    }
    const double target = scene.data_scale * static_cast<double>(s.elements()) *
                          (1.0 + scene.norm_spread * static_cast<double>(chunk - 1) / scene.chunks);
    const double norm = l1_norm(std::span<const double>(data));
    if (!(norm > 0.0))
        throw DegenerateInput("generated clean latent has zero norm");
    for (double& v : data)
        v *= target / norm;
    return Tensor(s.dims(), std::move(data));
}

/// X_T for chunk i: i.i.d. standard normal, seeded by (seed, i).
inline Tensor make_noise_latent(const SceneConfig& scene, int chunk) {
    Rng rng(derive_seed({scene.seed, static_cast<std::uint64_t>(chunk), detail::noise_tag}));
    std::vector<double> data(scene.shape.elements());
    for (double& v : data)
        v = rng.normal();
    return Tensor(scene.shape.dims(), std::move(data));
}

inline ChunkState make_chunk(const SceneConfig& scene, int chunk) {
    ChunkState st;
    st.index = chunk;
    st.latent = make_noise_latent(scene, chunk);
    st.x0 = make_clean_latent(scene, chunk);
    return st;
}

/// Optimal flow-matching velocity -(p/t) * (X_t - X_0).
inline Tensor ideal_velocity(const Tensor& latent, const Tensor& x0, const PowerLawSchedule& schedule, double t) {
    const double rate = schedule.log_derivative_ratio(t);
    if (latent.shape() != x0.shape())
        throw InvalidInput("ideal_velocity: latent and x0 shapes differ");
    std::vector<double> out(latent.size());
    const auto xs = latent.data();
    const auto cs = x0.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = -rate * (xs[i] - cs[i]);
    return Tensor(latent.shape(), std::move(out));
}

inline Tensor ideal_velocity(const ChunkState& chunk, const PowerLawSchedule& schedule, double t) {
    return ideal_velocity(chunk.latent, chunk.x0, schedule, t);
}

/// Ideal velocity plus a seeded Gaussian perturbation whose expected
/// relative L1 magnitude is noise_scale. The draw depends only on
/// (seed, chunk index, local step).
inline Tensor perturbed_velocity(const ChunkState& chunk, const PowerLawSchedule& schedule, double t,
                                 double noise_scale, std::uint64_t seed) {
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
        throw InvalidInput("noise_scale must be nonnegative and finite");
    Tensor v = ideal_velocity(chunk, schedule, t);
    if (noise_scale == 0.0)
        return v;
    const double mean_abs = l1_norm(v.data()) / static_cast<double>(v.size());
    // E|N(0,1)| = sqrt(2/pi)
    const double scale = noise_scale * mean_abs / std::sqrt(2.0 / std::numbers::pi);
    Rng rng(derive_seed({seed, static_cast<std::uint64_t>(chunk.index), static_cast<std::uint64_t>(chunk.local_step),
                         detail::perturb_tag}));
    Shape shape = v.shape();
    std::vector<double> data = std::move(v).release();
    for (double& x : data)
        x += scale * rng.normal();
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace flowcache
