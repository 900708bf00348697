#include "tinyema/augment.hpp"

#include <algorithm>
#include <cmath>

#include "tinyema/errors.hpp"
#include "tinyema/random.hpp"

namespace tinyema {

AugParams derive_params(const ScalarStats& local, const EmaScalarPair& ref, const AugGains& gains) {
    if (!ref.initialized) {
        throw StateError("augmentation reference is not initialized");
    }
    const double mu_den = std::max(ref.mu_ref, kAugDenominatorFloor);
    const double sigma_den = std::max(ref.sigma_ref, kAugDenominatorFloor);
    const double sigma_gap = ref.sigma_ref - local.std;

    AugParams p;
    p.alpha = 1.0 + gains.k1 * (ref.mu_ref - local.mean) / mu_den;
    p.beta = 1.0 + gains.k2 * sigma_gap / sigma_den;
    p.eta = gains.k3 * std::abs(sigma_gap) / sigma_den;

    p.alpha = std::clamp(p.alpha, kGainMin, kGainMax);
    p.beta = std::clamp(p.beta, kGainMin, kGainMax);
    p.eta = std::clamp(p.eta, 0.0, kEtaMax);
    return p;
}

ImageBuffer apply_augmentation(const ImageBuffer& image, const AugParams& params, NoiseSeed seed) {
    if (image.empty()) {
        throw ArgumentError("cannot augment an empty image");
    }
    ImageBuffer out = image;
    const double gain = params.beta * params.alpha;
    auto src = image.pixels();
    auto dst = out.pixels();
    if (params.eta == 0.0) {
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i] = std::clamp(gain * src[i], 0.0, 1.0);
        }
        return out;
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double eps = counter_normal(seed.seed, i);
        dst[i] = std::clamp(gain * src[i] + params.eta * eps, 0.0, 1.0);
    }
    return out;
}

AugmentedBatch augment_batch(std::span<const ImageBuffer> images, const EmaScalarPair& state,
                             const AugGains& gains, NoiseSeed seed) {
    if (images.empty()) {
        throw ArgumentError("augment_batch needs a non-empty batch");
    }
    AugmentedBatch result;
    result.state = state;
    result.state.observe(batch_stats(images));

    result.images.reserve(images.size());
    result.params.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const ScalarStats local = local_stats(images[i], Region::full(images[i]));
        const AugParams p = derive_params(local, result.state, gains);
        result.params.push_back(p);
        result.images.push_back(apply_augmentation(images[i], p, NoiseSeed{mix_seed(seed.seed, i)}));
    }
    return result;
}

}  // namespace tinyema
