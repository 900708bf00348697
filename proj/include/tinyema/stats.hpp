#pragma once

#include <span>

#include "tinyema/image.hpp"

namespace tinyema {

struct ScalarStats {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
};

inline constexpr double kRhoMin = 0.01;
inline constexpr double kRhoMax = 0.1;

/// Mean and population std of `region`. Throws BoundsError for empty or
/// out-of-bounds regions.
ScalarStats local_stats(const ImageBuffer& image, const Region& region);

/// Mean of per-image means and mean of per-image stds over full frames.
ScalarStats batch_stats(std::span<const ImageBuffer> images);

/// (1 - rho) * prev + rho * observed, rho in (0, 1].
double ema_update(double prev, double observed, double rho);

/// Dataset-level intensity reference. The first observation seeds the pair.
struct EmaScalarPair {
    double mu_ref = 0.0;
    double sigma_ref = 0.0;
    double rho = 0.05;
    bool initialized = false;

    EmaScalarPair() = default;
    explicit EmaScalarPair(double smoothing);

    void observe(const ScalarStats& batch);

    bool operator==(const EmaScalarPair&) const = default;
};

/// Throws ArgumentError unless 0 < rho <= 1. The narrower working interval
/// [0.01, 0.1] is enforced where configuration is loaded.
void check_rho(double rho);

}  // namespace tinyema
