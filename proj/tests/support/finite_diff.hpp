#pragma once

// Test-only oracles: central finite differences and relative-error helpers.
// Independent of the autodiff backward path on purpose.

#include <cmath>
#include <functional>
#include <limits>

#include "metassm/tensor.hpp"

namespace metassm::testing {

// Central finite-difference gradient of a scalar function of one tensor.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double step = 1e-6) {
    Tensor grad = Tensor::zeros(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double hi = f(probe);
        probe[i] = orig - step;
        const double lo = f(probe);
        probe[i] = orig;
        grad[i] = (hi - lo) / (2.0 * step);
    }
    return grad;
}

// max_i |a_i - b_i| scaled by the larger magnitude present (floored at 1).
inline double rel_error(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
    double max_diff = 0.0;
    double scale = 1.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return max_diff / scale;
}

inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace metassm::testing
