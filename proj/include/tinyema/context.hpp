#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tinyema/vector_ops.hpp"

namespace tinyema {

/// Axis-aligned box, top-left corner plus extents, in pixels.
struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double cx() const noexcept { return x + 0.5 * w; }
    double cy() const noexcept { return y + 0.5 * h; }
    double area() const noexcept { return w * h; }
    bool operator==(const BBox&) const = default;
};

/// Grid of C-vectors, one per cell; cell (r, c) covers pixels
/// [c*stride, (c+1)*stride) x [r*stride, (r+1)*stride).
struct FeatureMap {
    int channels = 0;
    int rows = 0;
    int cols = 0;
    int stride = 1;
    std::vector<double> data;  // row-major cells, channels contiguous

    FeatureMap() = default;
    FeatureMap(int channels, int rows, int cols, int stride);

    std::size_t cell_index(int r, int c) const noexcept {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c);
    }
    std::size_t cell_count() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
    std::span<double> cell(std::size_t index) {
        return {data.data() + index * static_cast<std::size_t>(channels), static_cast<std::size_t>(channels)};
    }
    std::span<const double> cell(std::size_t index) const {
        return {data.data() + index * static_cast<std::size_t>(channels), static_cast<std::size_t>(channels)};
    }
};

/// Expands the box by gamma of its extent on every side, then intersects it
/// with the image rectangle. Throws ArgumentError for invalid input or when
/// nothing of the box remains inside the image.
BBox expand_box(const BBox& box, double gamma, int image_w, int image_h);

struct PoolTap {
    std::size_t cell = 0;
    double weight = 0.0;
};

/// Linear pooling plan: pooled bin b = sum of weight * cell vector over
/// bins[b]. Bins are ordered column-major (b = bx * grid + by).
struct PoolPlan {
    int grid = 0;
    std::vector<std::vector<PoolTap>> bins;
};

/// Average pooling of `box` (pixels) on a grid x grid lattice of bins. Bins
/// at least one cell wide take the overlap-weighted average of covered cells;
/// smaller bins are sampled bilinearly at their center. A box under one pixel
/// on either side is sampled once at its center for every bin.
PoolPlan roi_pool_plan(int rows, int cols, int stride, const BBox& box, int grid);

/// Concatenated bin vectors, length channels * grid^2.
Vec apply_pool(const FeatureMap& fmap, const PoolPlan& plan);

Vec roi_pool(const FeatureMap& fmap, const BBox& box, int grid);

struct ContextState {
    std::size_t dim = 0;
    double rho = 0.05;
    double gamma = 0.5;
    bool initialized = false;
    Vec ref;

    ContextState() = default;
    /// Throws ArgumentError for dim == 0, rho outside (0,1] or negative gamma.
    ContextState(std::size_t dim, double rho, double gamma);

    bool operator==(const ContextState&) const = default;
};

/// EMA of the reference toward the mean context embedding; seeded on first
/// touch, no-op for an empty list.
void update_context_ref(std::span<const Vec> context_embeddings, ContextState& state);

/// Mean squared distance to the reference, which is held constant.
LossWithGrad context_loss(std::span<const Vec> context_embeddings, const ContextState& state);

/// Object embedding followed by the shared context reference.
Vec merge_embeddings(std::span<const double> object_embedding, const ContextState& state);

}  // namespace tinyema
