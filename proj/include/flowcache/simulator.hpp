// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "flowcache/armodel.hpp"
#include "flowcache/chunkcache.hpp"
#include "flowcache/config.hpp"
#include "flowcache/kvcache.hpp"
#include "flowcache/metrics.hpp"
#include "flowcache/random.hpp"
#include "flowcache/tensor.hpp"

namespace flowcache {

/// Seeded linear maps from a token's channel vector to per-head key, value
/// and query rows, plus a sinusoidal term in the token's global id so
/// tokens with similar content remain distinguishable.
class TokenProjector {
public:
    TokenProjector(const SceneConfig& scene, const KVSettings& kv)
        : m_shape(scene.shape), m_heads_k(kv.heads_k), m_heads_q(kv.heads_q), m_dim(kv.head_dim) {
        m_wk = weights(scene.seed, kv_tag_key, m_heads_k);
        m_wv = weights(scene.seed, kv_tag_value, m_heads_k);
        m_wq = weights(scene.seed, kv_tag_query, m_heads_q);
    }

    std::size_t tokens() const noexcept { return m_shape.tokens(); }

    /// (tokens, heads_k, d)
    Tensor keys(const Tensor& latent, int chunk) const { return project(latent, chunk, m_wk, m_heads_k, true); }
    Tensor values(const Tensor& latent, int chunk) const { return project(latent, chunk, m_wv, m_heads_k, false); }
    /// (tokens, heads_q, d)
    Tensor queries(const Tensor& latent, int chunk) const { return project(latent, chunk, m_wq, m_heads_q, true); }

    std::vector<std::int64_t> ids(int chunk) const {
        std::vector<std::int64_t> out(tokens());
        const auto base = static_cast<std::int64_t>(chunk - 1) * static_cast<std::int64_t>(tokens());
        for (std::size_t t = 0; t < out.size(); ++t)
            out[t] = base + static_cast<std::int64_t>(t);
        return out;
    }

private:
    static constexpr std::uint64_t kv_tag_key = 11, kv_tag_value = 12, kv_tag_query = 13;

    std::vector<double> weights(std::uint64_t seed, std::uint64_t tag, std::size_t heads) const {
        Rng rng(derive_seed({seed, tag}));
        std::vector<double> w(heads * m_dim * m_shape.channels);
        const double scale = 1.0 / std::sqrt(static_cast<double>(m_shape.channels));
        for (double& x : w)
            x = scale * rng.normal();
        return w;
    }

    Tensor project(const Tensor& latent, int chunk, const std::vector<double>& w, std::size_t heads,
                   bool positional) const {
        if (latent.shape() != m_shape.dims())
            throw InvalidInput("TokenProjector: latent shape " + shape_string(latent.shape()));
        const std::size_t n = tokens(), c_in = m_shape.channels;
        const auto x = latent.data();
        std::vector<double> out(n * heads * m_dim);
        std::vector<double> channel(c_in);
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t c = 0; c < c_in; ++c)
                channel[c] = x[c * n + t];
            const double id = static_cast<double>(static_cast<std::size_t>(chunk - 1) * n + t);
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t e = 0; e < m_dim; ++e) {
                    const double* row = &w[(h * m_dim + e) * c_in];
                    double acc = 0.0;
                    for (std::size_t c = 0; c < c_in; ++c)
                        acc += row[c] * channel[c];
                    if (positional) {
                        const double freq = std::pow(1.0e4, -static_cast<double>(e / 2 * 2) / static_cast<double>(m_dim));
                        acc += 0.5 * (e % 2 == 0 ? std::sin(id * freq) : std::cos(id * freq));
                    }
                    out[(t * heads + h) * m_dim + e] = acc;
                }
            }
        }
        return Tensor({n, heads, m_dim}, std::move(out));
    }

    ChunkShape m_shape;
    std::size_t m_heads_k, m_heads_q, m_dim;
    std::vector<double> m_wk, m_wv, m_wq;
};

/// Frame-level queries: the mean query row of each temporal slice.
inline Tensor frame_queries(const Tensor& token_queries, std::size_t frame_tokens) {
    const std::size_t n = token_queries.dim(0), heads = token_queries.dim(1), d = token_queries.dim(2);
    if (frame_tokens == 0 || n % frame_tokens != 0)
        throw InvalidConfig("kv.query_granularity: token count not divisible by the frame size");
    const std::size_t frames = n / frame_tokens;
    std::vector<double> out(frames * heads * d, 0.0);
    const auto q = token_queries.data();
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t k = 0; k < heads * d; ++k)
            out[(t / frame_tokens) * heads * d + k] += q[t * heads * d + k];
    for (double& v : out)
        v /= static_cast<double>(frame_tokens);
    return Tensor({frames, heads, d}, std::move(out));
}

struct RunOutput {
    RunTrace trace;
    std::vector<Tensor> final_latents;  // chunk i at position i-1
    std::vector<CompressionReport> reports;
};

/// Drive every chunk from noise to clean under the configured policy and
/// KV buffer, recording one StepRecord per global step.
inline RunOutput simulate(const RunConfig& config) {
    config.validate();
    const SceneConfig& scene = config.scene;
    const PowerLawSchedule schedule = config.make_schedule();
    const int steps = schedule.steps();
    const int k = scene.chunks;
    const int total = total_global_steps(k, steps, scene.window);
    const CompressionConfig ccfg = config.compression();
    const TokenProjector projector(scene, config.kv);
    const std::size_t chunk_tokens = scene.shape.tokens();

    KVBuffer buffer(config.kv.heads_k, config.kv.head_dim,
                    config.kv.compression ? std::optional<std::size_t>(config.budget_tokens()) : std::nullopt,
                    config.active_tokens());
    ChunkCache cache(config.policy.rule);

    std::vector<ChunkState> chunks;
    chunks.reserve(static_cast<std::size_t>(k));
    std::vector<StepInterval> windows;
    for (int i = 1; i <= k; ++i) {
        chunks.push_back(make_chunk(scene, i));
        windows.push_back(active_window(i, steps, scene.window, k));
    }

    RunOutput out;
    RunTrace& trace = out.trace;
    trace.config = to_json(config);
    trace.steps_per_chunk = steps;
    double peak_tokens = 0.0;

    for (int g = 0; g < total; ++g) {
        StepRecord rec;
        rec.global_step = g;
        for (ChunkState& ch : chunks) {
            if (ch.status == ChunkStatus::pending && windows[static_cast<std::size_t>(ch.index - 1)].begin == g) {
                ch.status = ChunkStatus::active;
                buffer.activate(ch.index, chunk_tokens);
            }
        }

        std::vector<int> finished;
        for (ChunkState& ch : chunks) {
            if (ch.status != ChunkStatus::active)
                continue;
            const double t = schedule.time_at(ch.local_step);
            const double dt = schedule.dt_at(ch.local_step);
            ChunkStep cs;
            cs.chunk = ch.index;
            cs.local_step = ch.local_step;

            Decision decision;
            if (config.policy.enabled) {
                const double est = cache.estimate(ch.index, ch.latent, dt);
                decision = cache.decide(ch.index, ch.local_step, est);
                if (std::isfinite(est))
                    cs.estimate = est;
            }
            const VelocityFn model = [&] {
                return perturbed_velocity(ch, schedule, t, config.model.noise_scale, scene.seed);
            };
            const Tensor before = ch.latent;
            AppliedStep step = cache.apply(ch.index, decision, ch.latent, dt, model);
            if (decision.action == Action::compute) {
                cs.true_metric = *cache.state(ch.index).cached_l1rel;
                cs.metric = cs.true_metric;
                rec.flops += config.cost.flops_per_chunk_forward +
                             config.cost.flops_per_kv_token_pair * static_cast<double>(chunk_tokens) *
                                 static_cast<double>(buffer.resident_tokens());
                ++trace.totals.computed;
            } else {
                cs.true_metric = relative_l1(model(), dt, before);
                cs.metric = decision.metric;
                ++trace.totals.reused;
            }
            cs.decision = decision.action;
            cs.f = cache.state(ch.index).f;
            rec.chunks.push_back(cs);

            ch.latent = std::move(step.latent);
            if (++ch.local_step == steps) {
                ch.status = ChunkStatus::clean;
                finished.push_back(ch.index);
            }
        }

        peak_tokens = std::max(peak_tokens, static_cast<double>(buffer.resident_tokens()));
        for (int idx : finished) {
            const ChunkState& ch = chunks[static_cast<std::size_t>(idx - 1)];
            const auto ids = projector.ids(idx);
            buffer.finish(idx, projector.keys(ch.latent, idx), projector.values(ch.latent, idx), ids);
            cache.retire(idx);
        }
        if (buffer.staged_len() > 0) {
            Tensor queries;
            if (buffer.needs_compression()) {
                const ChunkState* source = nullptr;
                for (const ChunkState& ch : chunks)
                    if (ch.status == ChunkStatus::active)
                        source = &ch;
                if (source == nullptr)
                    source = &chunks[static_cast<std::size_t>(finished.back() - 1)];
                queries = projector.queries(source->latent, source->index);
                if (ccfg.query_granularity == QueryGranularity::frame)
                    queries = frame_queries(queries, ccfg.frame_tokens);
            }
            CompressionReport report = settle(buffer, queries, ccfg);
            CompressionEvent ev;
            ev.chunk = finished.empty() ? 0 : finished.back();
            ev.phase = to_string(report.phase);
            ev.available = report.available;
            ev.retained = report.heads.empty() ? 0 : report.heads.front().retained_ids.size();
            ev.evicted = report.evicted_total();
            double imp = 0.0;
            for (const HeadReport& hr : report.heads)
                imp += hr.retained_importance;
            ev.retained_importance = report.heads.empty() ? 1.0 : imp / static_cast<double>(report.heads.size());
            rec.compressions.push_back(ev);
            out.reports.push_back(std::move(report));
        }

        for (std::size_t h = 0; h < buffer.heads(); ++h)
            rec.resident_kv_tokens.push_back(buffer.resident_tokens(h));
        peak_tokens = std::max(peak_tokens, static_cast<double>(buffer.resident_tokens()));
        rec.peak_resident_bytes = peak_tokens * config.cost.bytes_per_kv_token;
        trace.totals.total_flops += rec.flops;
        trace.steps.push_back(std::move(rec));
    }

    trace.totals.peak_resident_tokens = static_cast<std::size_t>(peak_tokens);
    trace.totals.peak_resident_bytes = peak_tokens * config.cost.bytes_per_kv_token;
    for (ChunkState& ch : chunks) {
        FinalChunk f;
        f.chunk = ch.index;
        f.l1 = l1_norm(ch.latent);
        std::vector<double> diff(ch.latent.size());
        for (std::size_t e = 0; e < diff.size(); ++e)
            diff[e] = ch.latent[e] - ch.x0[e];
        f.error_vs_x0 = l1_norm(std::span<const double>(diff)) / l1_norm(ch.x0);
        f.digest = tensor_digest(ch.latent);
        trace.finals.push_back(f);
        out.final_latents.push_back(std::move(ch.latent));
    }
    trace.hash = content_hash(trace);
    return out;
}

inline RunTrace run_denoise(const RunConfig& config) { return simulate(config).trace; }

/// max over chunks of ||x - x_ref||_1 / ||x_ref||_1
inline double max_relative_error(const std::vector<Tensor>& run, const std::vector<Tensor>& reference) {
    if (run.size() != reference.size())
        throw InvalidComparison("final latents: chunk counts differ");
    double worst = 0.0;
    for (std::size_t i = 0; i < run.size(); ++i) {
        if (run[i].shape() != reference[i].shape())
            throw InvalidComparison("final latents: shapes differ");
        double num = 0.0;
        for (std::size_t e = 0; e < run[i].size(); ++e)
            num += std::abs(run[i][e] - reference[i][e]);
        worst = std::max(worst, num / l1_norm(reference[i]));
    }
    return worst;
}

}  // namespace flowcache
