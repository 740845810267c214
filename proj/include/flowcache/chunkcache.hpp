// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>

#include "flowcache/error.hpp"
#include "flowcache/numerics.hpp"
#include "flowcache/schedule.hpp"
#include "flowcache/tensor.hpp"

namespace flowcache {

/// ||v * dt||_1 / ||x||_1
inline double relative_l1(const Tensor& velocity, double dt, const Tensor& latent) {
    if (velocity.shape() != latent.shape())
        throw InvalidInput("relative_l1: velocity shape " + shape_string(velocity.shape()) + " vs latent " +
                           shape_string(latent.shape()));
    const double denom = l1_norm(latent);
    if (!(denom > 0.0))
        throw DegenerateInput("relative_l1: latent has zero L1 norm");
    return l1_norm(velocity) * std::abs(dt) / denom;
}

enum class Action { compute, reuse };

inline const char* to_string(Action a) { return a == Action::compute ? "compute" : "reuse"; }

struct PolicyConfig {
    double epsilon = 0.015;  // may be 0 (always compute) or +inf
    int warmup = 5;          // m, counted in the chunk's own local steps

    void validate() const {
        if (!(epsilon >= 0.0) || std::isnan(epsilon))
            throw InvalidConfig("policy.epsilon: must be >= 0");
        if (warmup < 0)
            throw InvalidConfig("policy.warmup: must be >= 0");
    }
};

struct Decision {
    Action action = Action::compute;
    double metric = 0.0;  // estimate the decision was based on
    double f = 0.0;       // accumulator after the decision

    friend bool operator==(const Decision&, const Decision&) = default;
};

/// The threshold rule itself, free of any cache state: warmup first, then
/// compute when the accumulated metric would exceed epsilon.
inline Decision decide(const PolicyConfig& policy, int local_step, double f, double estimate, bool has_cache = true) {
    if (local_step < policy.warmup || !has_cache || std::isinf(estimate))
        return {Action::compute, estimate, 0.0};
    const double next = f + estimate;
    if (next > policy.epsilon)
        return {Action::compute, estimate, 0.0};
    return {Action::reuse, estimate, next};
}

/// Per-chunk reuse state.
struct ReuseAccumulator {
    double f = 0.0;
    std::optional<Tensor> cached_velocity;
    std::optional<double> cached_l1rel;
};

/// Stale-residual estimate of the current step's relative L1 distance:
/// the last computed velocity against the current latent. Returns +inf
/// when nothing is cached yet; decide() never lets that reach arithmetic.
inline double estimate_metric(const ReuseAccumulator& acc, const Tensor& latent, double dt) {
    if (!acc.cached_velocity)
        return std::numeric_limits<double>::infinity();
    return relative_l1(*acc.cached_velocity, dt, latent);
}

using VelocityFn = std::function<Tensor()>;

struct AppliedStep {
    Tensor latent;
    Tensor velocity;  // velocity actually used for the Euler step
};

/// Compute: evaluate the model, cache its output, step with it.
/// Reuse: step with the cached output and this step's dt.
inline AppliedStep apply(const Decision& decision, ReuseAccumulator& acc, const Tensor& latent, double dt,
                         const VelocityFn& model) {
    if (decision.action == Action::compute) {
        Tensor v = model();
        acc.cached_l1rel = relative_l1(v, dt, latent);
        acc.cached_velocity = v;
        acc.f = 0.0;
        return {euler_step(latent, v, dt), std::move(v)};
    }
    if (!acc.cached_velocity)
        throw InternalError("reuse decision without a cached velocity");
    acc.f = decision.f;
    return {euler_step(latent, *acc.cached_velocity, dt), *acc.cached_velocity};
}

/// Reuse state for every chunk of a run, keyed by chunk index.
class ChunkCache {
public:
    explicit ChunkCache(PolicyConfig policy) : m_policy(policy) { m_policy.validate(); }

    const PolicyConfig& policy() const noexcept { return m_policy; }

    ReuseAccumulator& state(int chunk) { return m_states[chunk]; }
    const ReuseAccumulator* find(int chunk) const {
        auto it = m_states.find(chunk);
        return it == m_states.end() ? nullptr : &it->second;
    }

    double estimate(int chunk, const Tensor& latent, double dt) { return estimate_metric(state(chunk), latent, dt); }

    Decision decide(int chunk, int local_step, double estimate) {
        const ReuseAccumulator& acc = state(chunk);
        return flowcache::decide(m_policy, local_step, acc.f, estimate, acc.cached_velocity.has_value());
    }

    AppliedStep apply(int chunk, const Decision& decision, const Tensor& latent, double dt, const VelocityFn& model) {
        return flowcache::apply(decision, state(chunk), latent, dt, model);
    }

    /// A finished chunk no longer needs its cached residual.
    void retire(int chunk) { m_states.erase(chunk); }

private:
    PolicyConfig m_policy;
    std::map<int, ReuseAccumulator> m_states;
};

}  // namespace flowcache
