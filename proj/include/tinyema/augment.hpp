#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tinyema/image.hpp"
#include "tinyema/stats.hpp"

namespace tinyema {

struct AugGains {
    double k1 = 1.0;  // brightness, [0.5, 1.5]
    double k2 = 1.0;  // contrast, [0.5, 1.5]
    double k3 = 0.05; // noise, [0.01, 0.1]
};

struct AugParams {
    double alpha = 1.0;
    double beta = 1.0;
    double eta = 0.0;

    bool operator==(const AugParams&) const = default;
};

struct NoiseSeed {
    std::uint64_t seed = 0;
};

inline constexpr double kAugDenominatorFloor = 1e-6;
inline constexpr double kGainMin = 0.25;
inline constexpr double kGainMax = 4.0;
inline constexpr double kEtaMax = 0.5;

/// Brightness, contrast and noise amplitude from the gap between an image's
/// statistics and the running reference. Throws StateError if `ref` has not
/// been seeded.
AugParams derive_params(const ScalarStats& local, const EmaScalarPair& ref, const AugGains& gains);

/// beta * alpha * x + eta * eps(u, v), clamped to [0,1]. eps is a standard
/// normal indexed by (seed, pixel index), so output is a pure function of the
/// arguments.
ImageBuffer apply_augmentation(const ImageBuffer& image, const AugParams& params, NoiseSeed seed);

struct AugmentedBatch {
    std::vector<ImageBuffer> images;
    std::vector<AugParams> params;
    EmaScalarPair state;
};

/// Advances the reference once with the batch statistics, then augments each
/// image against the updated reference. Image i draws noise from a seed mixed
/// with i.
AugmentedBatch augment_batch(std::span<const ImageBuffer> images, const EmaScalarPair& state,
                             const AugGains& gains, NoiseSeed seed);

}  // namespace tinyema
