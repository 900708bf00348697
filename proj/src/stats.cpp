#include "tinyema/stats.hpp"

#include <cmath>
#include <string>

#include "tinyema/errors.hpp"

namespace tinyema {

ScalarStats local_stats(const ImageBuffer& image, const Region& region) {
    if (region.x0 < 0 || region.y0 < 0 || region.x1 > image.width() ||
        region.y1 > image.height()) {
        throw BoundsError("region exceeds image bounds");
    }
    if (region.x0 >= region.x1 || region.y0 >= region.y1) {
        throw BoundsError("region is empty");
    }
    const double n = static_cast<double>(region.area());
    double sum = 0.0;
    for (int y = region.y0; y < region.y1; ++y) {
        for (int x = region.x0; x < region.x1; ++x) {
            sum += image.at(x, y);
        }
    }
    const double mean = sum / n;
    // Two-pass to keep the deviation term free of cancellation.
    double ss = 0.0;
    for (int y = region.y0; y < region.y1; ++y) {
        for (int x = region.x0; x < region.x1; ++x) {
            const double d = image.at(x, y) - mean;
            ss += d * d;
        }
    }
    return {mean, std::sqrt(ss / n)};
}

ScalarStats batch_stats(std::span<const ImageBuffer> images) {
    if (images.empty()) {
        throw ArgumentError("batch_stats needs at least one image");
    }
    double mean = 0.0;
    double std = 0.0;
    for (const auto& img : images) {
        const ScalarStats s = local_stats(img, Region::full(img));
        mean += s.mean;
        std += s.std;
    }
    const double n = static_cast<double>(images.size());
    return {mean / n, std / n};
}

void check_rho(double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) {
        throw ArgumentError("EMA smoothing factor must lie in (0, 1], got " + std::to_string(rho));
    }
}

double ema_update(double prev, double observed, double rho) {
    check_rho(rho);
    // Incremental form of (1 - rho) * prev + rho * observed; exact at the
    // fixed point observed == prev.
    return prev + rho * (observed - prev);
}

EmaScalarPair::EmaScalarPair(double smoothing) : rho(smoothing) { check_rho(smoothing); }

void EmaScalarPair::observe(const ScalarStats& batch) {
    if (!initialized) {
        mu_ref = batch.mean;
        sigma_ref = batch.std;
        initialized = true;
        return;
    }
    mu_ref = ema_update(mu_ref, batch.mean, rho);
    sigma_ref = ema_update(sigma_ref, batch.std, rho);
}

}  // namespace tinyema
