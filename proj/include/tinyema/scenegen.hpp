#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tinyema/context.hpp"
#include "tinyema/image.hpp"
#include "tinyema/manifest.hpp"
#include "tinyema/stabilize.hpp"

namespace tinyema {

struct Illumination {
    double amplitude = 0.0;  // peak-to-peak of a linear ramp
    double direction = 0.0;  // radians, 0 = increasing along +x
};

struct Texture {
    double amplitude = 0.0;  // multi-octave value noise in [-amplitude, amplitude]
    double scale = 32.0;     // lattice spacing of the coarsest octave, pixels
    int octaves = 4;
};

/// Scene recipe. Rendering is
///   I = exposure * (background + ramp + texture - dots +/- distractors) + haze + noise
/// clamped to [0,1], so exposure is a pure multiplicative gain on the scene.
struct SceneSpec {
    int width = 512;
    int height = 512;
    int n_objects = 100;
    double object_radius = 3.0;
    double radius_jitter = 0.5;
    double min_separation = 10.0;
    double object_depth = 0.35;
    Illumination illumination;
    Texture texture;
    int distractors = 0;
    double background_level = 0.6;
    double exposure = 1.0;
    double haze = 0.0;
    double sensor_noise = 0.0;
    std::uint64_t seed = 0;
};

struct Annotation {
    int id = 0;
    Point2 center;
    double radius = 0.0;
    BBox box;  // square of side 2 * radius centered on `center`
};

struct Scene {
    ImageBuffer image;
    std::vector<Annotation> annotations;
    std::vector<Point2> distractor_centers;
};

/// Throws ArgumentError for an invalid spec and GenerationError when objects
/// or distractors cannot be placed at the requested separation.
Scene generate_scene(const SceneSpec& spec);

/// Multi-octave value noise in [-1, 1].
double value_noise(double x, double y, double scale, int octaves, std::uint64_t seed);

inline const std::vector<std::string>& default_tiers() {
    static const std::vector<std::string> tiers = {"bright_flat", "low_contrast", "dark_textured",
                                                   "dark_distractors"};
    return tiers;
}

struct DatasetConfig {
    int n_images = 60;
    int width = 512;
    int height = 512;
    double mean_objects = 100.0;
    double object_jitter = 0.1;  // object count uniform in mean * [1 - j, 1 + j]
    double object_radius = 3.0;
    double radius_jitter = 0.5;
    double min_separation = 10.0;
    int bit_depth = 8;
    bool png = false;
    std::vector<std::string> tiers = default_tiers();
    std::uint64_t seed = 1;
};

/// Per-image recipe for image `index`: tiers are assigned round-robin and
/// their knobs drawn from a stream keyed on (seed, index).
SceneSpec scene_spec_for(const DatasetConfig& config, int index);

/// Builds one SceneSpec for `tier` from a random stream; unknown tier names
/// throw ArgumentError.
SceneSpec tier_scene_spec(const std::string& tier, const DatasetConfig& config, std::uint64_t stream_seed);

/// Writes images/img_NNNN.pgm (and .png when requested) plus manifest.jsonl
/// under `out_dir`; returns the manifest.
Manifest generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

/// Renders the dataset in memory without touching the filesystem. Image and
/// annotation content is identical to generate_dataset after PGM
/// quantization at config.bit_depth.
struct InMemoryDataset {
    Manifest manifest;
    std::vector<ImageBuffer> images;
};
InMemoryDataset render_dataset(const DatasetConfig& config);

}  // namespace tinyema
