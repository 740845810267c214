// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "flowcache/error.hpp"
#include "flowcache/tensor.hpp"

namespace flowcache {

/// Descending timestep grid t_steps = T, ..., t_0 = 0 with the per-step
/// magnitudes dt_j = t_j - t_{j+1} in denoising order.
struct TimeGrid {
    std::vector<double> times;
    std::vector<double> deltas;

    std::size_t steps() const noexcept { return deltas.size(); }
};

/// sigma(t) = (t/T)^p on a uniform grid of `steps` intervals.
class PowerLawSchedule {
public:
    PowerLawSchedule(double power, double total_time, int steps)
        : m_power(power), m_total_time(total_time), m_steps(steps) {
        if (!(power > 0.0) || !std::isfinite(power))
            throw InvalidConfig("schedule.p: must be a positive finite real");
        if (!(total_time > 0.0) || !std::isfinite(total_time))
            throw InvalidConfig("schedule.T: must be a positive finite real");
        if (steps < 1)
            throw InvalidConfig("schedule.steps: must be >= 1");
    }

    double power() const noexcept { return m_power; }
    double total_time() const noexcept { return m_total_time; }
    int steps() const noexcept { return m_steps; }

    double sigma(double t) const {
        if (!(t >= 0.0 && t <= m_total_time))
            throw InvalidInput("sigma: t=" + std::to_string(t) + " outside [0, T]");
        return std::pow(t / m_total_time, m_power);
    }

    /// sigma'(t) / sigma(t) = p / t.
    double log_derivative_ratio(double t) const {
        if (!(t > 0.0))
            throw Singularity("log-derivative ratio is singular at t=" + std::to_string(t));
        return m_power / t;
    }

    /// Grid point i of the ascending lattice t_i = T*i/steps.
    double grid_point(int i) const { return m_total_time * static_cast<double>(i) / static_cast<double>(m_steps); }

    /// Time at which local denoising step j (0-based) evaluates the velocity.
    double time_at(int local_step) const { return grid_point(m_steps - local_step); }

    /// Magnitude of the Euler step taken at local step j.
    double dt_at(int local_step) const { return time_at(local_step) - time_at(local_step + 1); }

    TimeGrid grid() const {
        TimeGrid g;
        g.times.reserve(static_cast<std::size_t>(m_steps) + 1);
        g.deltas.reserve(static_cast<std::size_t>(m_steps));
        for (int j = 0; j <= m_steps; ++j)
            g.times.push_back(time_at(j));
        for (int j = 0; j < m_steps; ++j)
            g.deltas.push_back(g.times[static_cast<std::size_t>(j)] - g.times[static_cast<std::size_t>(j) + 1]);
        return g;
    }

private:
    double m_power;
    double m_total_time;
    int m_steps;
};

/// First-order Euler update x + v*dt.
inline Tensor euler_step(const Tensor& x, const Tensor& v, double dt) {
    if (x.shape() != v.shape())
        throw InvalidInput("euler_step: shape " + shape_string(x.shape()) + " vs " + shape_string(v.shape()));
    if (!(dt > 0.0) || !std::isfinite(dt))
        throw InvalidInput("euler_step: dt must be positive and finite");
    std::vector<double> out(x.size());
    const auto xs = x.data();
    const auto vs = v.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xs[i] + vs[i] * dt;
    return Tensor(x.shape(), std::move(out));
}

}  // namespace flowcache
