#include "tinyema/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "tinyema/errors.hpp"
#include "tinyema/image_io.hpp"
#include "tinyema/random.hpp"

namespace tinyema {
namespace {

constexpr int kPlacementAttemptsPerItem = 400;

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double lattice(long ix, long iy, std::uint64_t seed) {
    const std::uint64_t key = (static_cast<std::uint64_t>(ix) * 0x9E3779B1ULL) ^
                              (static_cast<std::uint64_t>(iy) * 0x85EBCA77C2B2AE63ULL);
    return 2.0 * counter_uniform(seed, key) - 1.0;
}

double value_noise_octave(double x, double y, double scale, std::uint64_t seed) {
    const double u = x / scale;
    const double v = y / scale;
    const long ix = static_cast<long>(std::floor(u));
    const long iy = static_cast<long>(std::floor(v));
    const double tx = smoothstep(u - ix);
    const double ty = smoothstep(v - iy);
    const double a = lattice(ix, iy, seed);
    const double b = lattice(ix + 1, iy, seed);
    const double c = lattice(ix, iy + 1, seed);
    const double d = lattice(ix + 1, iy + 1, seed);
    return (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty;
}

void validate(const SceneSpec& s) {
    if (s.width < 1 || s.height < 1) throw ArgumentError("scene extents must be positive");
    if (s.n_objects < 0) throw ArgumentError("n_objects must be non-negative");
    if (s.distractors < 0) throw ArgumentError("distractors must be non-negative");
    if (s.min_separation < 0.0) throw ArgumentError("min_separation must be non-negative");
    if (!(s.object_radius > 0.0)) throw ArgumentError("object_radius must be positive");
    if (s.radius_jitter < 0.0 || s.radius_jitter >= s.object_radius) {
        throw ArgumentError("radius_jitter must lie in [0, object_radius)");
    }
    if (s.illumination.amplitude < 0.0 || s.texture.amplitude < 0.0 || s.object_depth < 0.0 ||
        s.sensor_noise < 0.0 || s.exposure < 0.0 || s.haze < 0.0) {
        throw ArgumentError("scene amplitudes must be non-negative");
    }
    if (!(s.texture.scale > 0.0) || s.texture.octaves < 1) {
        throw ArgumentError("texture scale and octaves must be positive");
    }
}

struct Placed {
    Point2 center;
    double radius;
};

bool far_enough(const Point2& p, const std::vector<Placed>& others, double min_sep) {
    const double m2 = min_sep * min_sep;
    for (const auto& o : others) {
        const double dx = p.x - o.center.x;
        const double dy = p.y - o.center.y;
        if (dx * dx + dy * dy < m2) return false;
    }
    return true;
}

// Rejection sampling; `blockers` must also be kept at min_sep.
std::vector<Placed> place(int count, const SceneSpec& s, Rng& rng, const std::vector<Placed>& blockers,
                          const char* what) {
    std::vector<Placed> placed;
    placed.reserve(static_cast<std::size_t>(count));
    const long budget = static_cast<long>(kPlacementAttemptsPerItem) * count + 1000;
    long attempts = 0;
    while (static_cast<int>(placed.size()) < count) {
        if (++attempts > budget) {
            throw GenerationError("cannot place " + std::to_string(count) + " " + what + " in " +
                                  std::to_string(s.width) + "x" + std::to_string(s.height) +
                                  " with min_separation " + std::to_string(s.min_separation) + " (placed " +
                                  std::to_string(placed.size()) + ")");
        }
        const double r = s.object_radius + rng.uniform(-s.radius_jitter, s.radius_jitter);
        const double margin = std::min({r, 0.5 * s.width, 0.5 * s.height});
        const Point2 p{rng.uniform(margin, s.width - margin), rng.uniform(margin, s.height - margin)};
        if (far_enough(p, placed, s.min_separation) && far_enough(p, blockers, s.min_separation)) {
            placed.push_back({p, r});
        }
    }
    return placed;
}

// Adds amplitude * exp(-d^2 / (2 sigma^2)) around the center.
void stamp(std::vector<double>& layer, int width, int height, const Placed& blob, double amplitude) {
    const double sigma = 0.6 * blob.radius;
    const double reach = 3.0 * sigma;
    const int x0 = std::max(0, static_cast<int>(std::floor(blob.center.x - reach)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(blob.center.x + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(blob.center.y - reach)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(blob.center.y + reach)));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            // Pixel (x, y) covers [x, x+1); sample at its center.
            const double dx = x + 0.5 - blob.center.x;
            const double dy = y + 0.5 - blob.center.y;
            layer[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] +=
                amplitude * std::exp(-(dx * dx + dy * dy) * inv);
        }
    }
}

ImageBuffer quantized(const ImageBuffer& image, int bit_depth) {
    const double maxval = bit_depth == 16 ? 65535.0 : 255.0;
    ImageBuffer out = image;
    for (double& v : out.pixels()) {
        v = std::min(1.0, std::round(std::clamp(v, 0.0, 1.0) * maxval) / maxval);
    }
    return out;
}

std::string image_name(int index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%04d.%s", index, ext);
    return buf;
}

}  // namespace

double value_noise(double x, double y, double scale, int octaves, std::uint64_t seed) {
    double sum = 0.0;
    double norm = 0.0;
    double amp = 1.0;
    double s = scale;
    for (int o = 0; o < octaves; ++o) {
        sum += amp * value_noise_octave(x, y, s, mix_seed(seed, static_cast<std::uint64_t>(o)));
        norm += amp;
        amp *= 0.5;
        s *= 0.5;
    }
    return sum / norm;
}

Scene generate_scene(const SceneSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);
    const auto objects = place(spec.n_objects, spec, rng, {}, "objects");
    const auto distractors = place(spec.distractors, spec, rng, objects, "distractors");

    const int w = spec.width;
    const int h = spec.height;
    std::vector<double> scene(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));

    const double dir_x = std::cos(spec.illumination.direction);
    const double dir_y = std::sin(spec.illumination.direction);
    const double half_span = 0.5 * (std::abs(dir_x) * w + std::abs(dir_y) * h);
    const std::uint64_t texture_seed = mix_seed(spec.seed, 0x7E47);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = spec.background_level;
            if (spec.illumination.amplitude > 0.0 && half_span > 0.0) {
                const double proj = (x + 0.5 - 0.5 * w) * dir_x + (y + 0.5 - 0.5 * h) * dir_y;
                v += spec.illumination.amplitude * 0.5 * proj / half_span;
            }
            if (spec.texture.amplitude > 0.0) {
                v += spec.texture.amplitude * value_noise(x, y, spec.texture.scale, spec.texture.octaves, texture_seed);
            }
            scene[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = v;
        }
    }
    for (const auto& o : objects) {
        stamp(scene, w, h, o, -spec.object_depth);
    }
    // Distractors alternate between a half-depth dark blob and an inverted
    // (bright) blob of the same size.
    Rng kind_rng(mix_seed(spec.seed, 0xD157));
    for (const auto& d : distractors) {
        const bool inverted = kind_rng.uniform() < 0.5;
        stamp(scene, w, h, d, inverted ? spec.object_depth : -0.5 * spec.object_depth);
    }

    const std::uint64_t noise_seed = mix_seed(spec.seed, 0x5E250);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        double v = spec.exposure * scene[i] + spec.haze;
        if (spec.sensor_noise > 0.0) v += spec.sensor_noise * counter_normal(noise_seed, i);
        scene[i] = std::clamp(v, 0.0, 1.0);
    }

    Scene out{ImageBuffer(w, h, std::move(scene)), {}, {}};
    out.annotations.reserve(objects.size());
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const auto& o = objects[i];
        out.annotations.push_back(
            {static_cast<int>(i), o.center, o.radius, BBox{o.center.x - o.radius, o.center.y - o.radius, 2 * o.radius, 2 * o.radius}});
    }
    for (const auto& d : distractors) out.distractor_centers.push_back(d.center);
    return out;
}

SceneSpec tier_scene_spec(const std::string& tier, const DatasetConfig& config, std::uint64_t stream_seed) {
    Rng rng(stream_seed);
    SceneSpec s;
    s.width = config.width;
    s.height = config.height;
    const double lo = config.mean_objects * (1.0 - config.object_jitter);
    const double hi = config.mean_objects * (1.0 + config.object_jitter);
    s.n_objects = static_cast<int>(std::lround(rng.uniform(lo, hi)));
    s.object_radius = config.object_radius;
    s.radius_jitter = config.radius_jitter;
    s.min_separation = config.min_separation;
    s.illumination.direction = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.seed = splitmix64(stream_seed ^ 0xA5A5A5A5ULL);

    if (tier == "bright_flat") {
        s.background_level = 0.62;
        s.exposure = rng.uniform(0.9, 1.2);
        s.illumination.amplitude = 0.05;
        s.texture = {0.03, 48.0, 3};
        s.sensor_noise = 0.01;
    } else if (tier == "low_contrast") {
        s.background_level = 0.6;
        s.object_depth = 0.2;
        s.exposure = rng.uniform(0.5, 0.8);
        s.illumination.amplitude = 0.05;
        s.texture = {0.04, 32.0, 3};
        s.sensor_noise = 0.012;
    } else if (tier == "dark_textured") {
        s.background_level = 0.55;
        s.exposure = rng.uniform(0.25, 0.45);
        s.illumination.amplitude = 0.2;
        s.texture = {0.15, 16.0, 4};
        s.sensor_noise = 0.012;
    } else if (tier == "dark_distractors") {
        s.background_level = 0.55;
        s.exposure = rng.uniform(0.25, 0.45);
        s.illumination.amplitude = 0.15;
        s.texture = {0.10, 24.0, 4};
        s.distractors = static_cast<int>(std::lround(0.4 * config.mean_objects));
        s.sensor_noise = 0.012;
    } else {
        throw ArgumentError("unknown difficulty tier '" + tier + "'");
    }
    return s;
}

SceneSpec scene_spec_for(const DatasetConfig& config, int index) {
    if (config.tiers.empty()) throw ArgumentError("dataset needs at least one tier");
    const std::string& tier = config.tiers[static_cast<std::size_t>(index) % config.tiers.size()];
    return tier_scene_spec(tier, config, mix_seed(config.seed, static_cast<std::uint64_t>(index)));
}

InMemoryDataset render_dataset(const DatasetConfig& config) {
    if (config.n_images < 0) throw ArgumentError("n_images must be non-negative");
    if (config.bit_depth != 8 && config.bit_depth != 16) throw ArgumentError("bit_depth must be 8 or 16");
    InMemoryDataset ds;
    ds.images.reserve(static_cast<std::size_t>(config.n_images));
    for (int i = 0; i < config.n_images; ++i) {
        const SceneSpec spec = scene_spec_for(config, i);
        Scene scene = generate_scene(spec);
        ManifestRecord rec;
        rec.image = "images/" + image_name(i, "pgm");
        rec.width = spec.width;
        rec.height = spec.height;
        rec.tier = config.tiers[static_cast<std::size_t>(i) % config.tiers.size()];
        rec.seed = spec.seed;
        for (const auto& a : scene.annotations) {
            rec.objects.push_back({a.center.x, a.center.y, a.box.w, a.box.h});
        }
        ds.manifest.records.push_back(std::move(rec));
        ds.images.push_back(quantized(scene.image, config.bit_depth));
    }
    return ds;
}

Manifest generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
    InMemoryDataset ds = render_dataset(config);
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec) throw IoError((out_dir / "images").string(), ec.message());
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        write_pgm(out_dir / ds.manifest.records[i].image, ds.images[i], config.bit_depth);
        if (config.png) {
            write_png(out_dir / "images" / image_name(static_cast<int>(i), "png"), ds.images[i], config.bit_depth);
        }
    }
    ds.manifest.directory = out_dir;
    write_manifest(out_dir / "manifest.jsonl", ds.manifest);
    return ds.manifest;
}

}  // namespace tinyema
