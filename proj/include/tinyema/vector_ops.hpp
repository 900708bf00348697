#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tinyema {

using Vec = std::vector<double>;

/// A scalar loss and its gradient with respect to each input vector.
struct LossWithGrad {
    double value = 0.0;
    std::vector<Vec> grad;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// prev += rho * (observed - prev), componentwise.
inline void ema_update_inplace(std::span<double> prev, std::span<const double> observed, double rho) {
    for (std::size_t i = 0; i < prev.size(); ++i) {
        prev[i] += rho * (observed[i] - prev[i]);
    }
}

}  // namespace tinyema
