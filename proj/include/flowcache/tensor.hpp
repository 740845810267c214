// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowcache/error.hpp"

namespace flowcache {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0)
            out += ", ";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

/// Dense row-major array of doubles.
///
/// A Tensor is immutable once built: every element is finite and the shape
/// product matches the element count, or construction throws InvalidInput.
/// Operations that could overflow check their results through the same
/// constructor, so a non-finite value never escapes as a Tensor.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data) : m_shape(std::move(shape)), m_data(std::move(data)) {
        for (std::size_t dim : m_shape) {
            if (dim == 0)
                throw InvalidInput("tensor shape " + shape_string(m_shape) + " has a zero dimension");
        }
        if (shape_size(m_shape) != m_data.size())
            throw InvalidInput("tensor shape " + shape_string(m_shape) + " does not match " +
                               std::to_string(m_data.size()) + " elements");
        for (double v : m_data) {
            if (!std::isfinite(v))
                throw InvalidInput("tensor element is not finite");
        }
    }

    static Tensor vector(std::vector<double> data) {
        Shape shape{data.size()};
        return Tensor(std::move(shape), std::move(data));
    }

    static Tensor filled(Shape shape, double value) {
        const std::size_t n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

    const Shape& shape() const noexcept { return m_shape; }
    std::size_t rank() const noexcept { return m_shape.size(); }
    std::size_t size() const noexcept { return m_data.size(); }
    bool empty() const noexcept { return m_data.empty(); }
    std::size_t dim(std::size_t axis) const { return m_shape.at(axis); }

    std::span<const double> data() const noexcept { return m_data; }
    double operator[](std::size_t i) const { return m_data[i]; }

    /// Moves the storage out; the tensor is left empty.
    std::vector<double> release() && { m_shape.clear(); return std::move(m_data); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape m_shape;
    std::vector<double> m_data;
};

}  // namespace flowcache
