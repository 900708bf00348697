#include "tinyema/context.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tinyema/errors.hpp"
#include "tinyema/stats.hpp"

namespace tinyema {
namespace {

std::vector<PoolTap> bilinear_taps(int rows, int cols, double fx, double fy) {
    // Cell centers sit at half-integer feature coordinates.
    const double u = std::clamp(fx - 0.5, 0.0, static_cast<double>(cols - 1));
    const double v = std::clamp(fy - 0.5, 0.0, static_cast<double>(rows - 1));
    const int c0 = static_cast<int>(std::floor(u));
    const int r0 = static_cast<int>(std::floor(v));
    const int c1 = std::min(c0 + 1, cols - 1);
    const int r1 = std::min(r0 + 1, rows - 1);
    const double tu = u - c0;
    const double tv = v - r0;
    const auto idx = [cols](int r, int c) {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c);
    };
    std::vector<PoolTap> taps;
    const auto add = [&](int r, int c, double w) {
        if (w == 0.0) return;
        const std::size_t i = idx(r, c);
        for (auto& t : taps) {
            if (t.cell == i) {
                t.weight += w;
                return;
            }
        }
        taps.push_back({i, w});
    };
    add(r0, c0, (1.0 - tu) * (1.0 - tv));
    add(r0, c1, tu * (1.0 - tv));
    add(r1, c0, (1.0 - tu) * tv);
    add(r1, c1, tu * tv);
    return taps;
}

std::vector<PoolTap> area_taps(int cols, double x0, double x1, double y0, double y1) {
    const double inv_area = 1.0 / ((x1 - x0) * (y1 - y0));
    std::vector<PoolTap> taps;
    const int c_begin = static_cast<int>(std::floor(x0));
    const int c_end = static_cast<int>(std::ceil(x1));
    const int r_begin = static_cast<int>(std::floor(y0));
    const int r_end = static_cast<int>(std::ceil(y1));
    for (int r = r_begin; r < r_end; ++r) {
        const double oy = std::min<double>(r + 1, y1) - std::max<double>(r, y0);
        if (oy <= 0.0) continue;
        for (int c = c_begin; c < c_end; ++c) {
            const double ox = std::min<double>(c + 1, x1) - std::max<double>(c, x0);
            if (ox <= 0.0) continue;
            taps.push_back({static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c),
                            ox * oy * inv_area});
        }
    }
    return taps;
}

}  // namespace

FeatureMap::FeatureMap(int channels_, int rows_, int cols_, int stride_)
    : channels(channels_), rows(rows_), cols(cols_), stride(stride_) {
    if (channels < 1 || rows < 1 || cols < 1 || stride < 1) {
        throw ArgumentError("feature map dimensions must be positive");
    }
    data.assign(cell_count() * static_cast<std::size_t>(channels), 0.0);
}

BBox expand_box(const BBox& box, double gamma, int image_w, int image_h) {
    if (!(box.w > 0.0) || !(box.h > 0.0)) {
        throw ArgumentError("box extents must be positive");
    }
    if (!(gamma >= 0.0)) {
        throw ArgumentError("expansion factor must be non-negative");
    }
    const double x0 = box.x - gamma * box.w;
    const double y0 = box.y - gamma * box.h;
    const double x1 = x0 + box.w + 2.0 * gamma * box.w;
    const double y1 = y0 + box.h + 2.0 * gamma * box.h;

    const double cx0 = std::max(x0, 0.0);
    const double cy0 = std::max(y0, 0.0);
    const double cx1 = std::min(x1, static_cast<double>(image_w));
    const double cy1 = std::min(y1, static_cast<double>(image_h));
    if (!(cx1 > cx0) || !(cy1 > cy0)) {
        throw ArgumentError("expanded box lies outside the image");
    }
    return {cx0, cy0, cx1 - cx0, cy1 - cy0};
}

PoolPlan roi_pool_plan(int rows, int cols, int stride, const BBox& box, int grid) {
    if (grid < 1) throw ArgumentError("pooling grid must be at least 1");
    if (rows < 1 || cols < 1 || stride < 1) throw ArgumentError("invalid feature map geometry");
    const double s = static_cast<double>(stride);
    const double fx0 = std::max(box.x / s, 0.0);
    const double fy0 = std::max(box.y / s, 0.0);
    const double fx1 = std::min((box.x + box.w) / s, static_cast<double>(cols));
    const double fy1 = std::min((box.y + box.h) / s, static_cast<double>(rows));

    PoolPlan plan;
    plan.grid = grid;
    plan.bins.resize(static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid));

    if (box.w < 1.0 || box.h < 1.0) {
        const auto taps = bilinear_taps(rows, cols, box.cx() / s, box.cy() / s);
        for (auto& bin : plan.bins) bin = taps;
        return plan;
    }
    if (!(fx1 > fx0) || !(fy1 > fy0)) {
        throw ArgumentError("box does not intersect the feature map");
    }
    const double bw = (fx1 - fx0) / grid;
    const double bh = (fy1 - fy0) / grid;
    for (int bx = 0; bx < grid; ++bx) {
        for (int by = 0; by < grid; ++by) {
            const double x0 = fx0 + bx * bw;
            const double y0 = fy0 + by * bh;
            const double x1 = (bx + 1 == grid) ? fx1 : x0 + bw;
            const double y1 = (by + 1 == grid) ? fy1 : y0 + bh;
            auto& bin = plan.bins[static_cast<std::size_t>(bx * grid + by)];
            // Tolerance keeps exactly one-cell bins on the area path despite rounding.
            if (bw >= 1.0 - 1e-9 && bh >= 1.0 - 1e-9) {
                bin = area_taps(cols, x0, x1, y0, y1);
            } else {
                bin = bilinear_taps(rows, cols, 0.5 * (x0 + x1), 0.5 * (y0 + y1));
            }
        }
    }
    return plan;
}

Vec apply_pool(const FeatureMap& fmap, const PoolPlan& plan) {
    const std::size_t c = static_cast<std::size_t>(fmap.channels);
    Vec out(plan.bins.size() * c, 0.0);
    for (std::size_t b = 0; b < plan.bins.size(); ++b) {
        double* dst = out.data() + b * c;
        for (const auto& tap : plan.bins[b]) {
            const auto src = fmap.cell(tap.cell);
            for (std::size_t k = 0; k < c; ++k) dst[k] += tap.weight * src[k];
        }
    }
    return out;
}

Vec roi_pool(const FeatureMap& fmap, const BBox& box, int grid) {
    return apply_pool(fmap, roi_pool_plan(fmap.rows, fmap.cols, fmap.stride, box, grid));
}

ContextState::ContextState(std::size_t dim_, double rho_, double gamma_) : dim(dim_), rho(rho_), gamma(gamma_) {
    if (dim == 0) throw ArgumentError("context dimension must be positive");
    check_rho(rho);
    if (!(gamma >= 0.0)) throw ArgumentError("gamma must be non-negative");
}

void update_context_ref(std::span<const Vec> context_embeddings, ContextState& state) {
    if (context_embeddings.empty()) return;
    Vec mean(state.dim, 0.0);
    for (const auto& e : context_embeddings) {
        if (e.size() != state.dim) {
            throw ArgumentError("context embedding has dimension " + std::to_string(e.size()) + ", expected " +
                                std::to_string(state.dim));
        }
        for (std::size_t d = 0; d < state.dim; ++d) mean[d] += e[d];
    }
    for (double& v : mean) v /= static_cast<double>(context_embeddings.size());
    if (!state.initialized) {
        state.ref = std::move(mean);
        state.initialized = true;
    } else {
        ema_update_inplace(state.ref, mean, state.rho);
    }
}

LossWithGrad context_loss(std::span<const Vec> context_embeddings, const ContextState& state) {
    if (!state.initialized) {
        throw StateError("context reference is not initialized");
    }
    LossWithGrad out;
    out.grad.resize(context_embeddings.size());
    if (context_embeddings.empty()) return out;
    const double inv_n = 1.0 / static_cast<double>(context_embeddings.size());
    for (std::size_t i = 0; i < context_embeddings.size(); ++i) {
        const Vec& e = context_embeddings[i];
        if (e.size() != state.dim) {
            throw ArgumentError("context embedding dimension mismatch");
        }
        out.value += inv_n * squared_distance(e, state.ref);
        out.grad[i].resize(e.size());
        for (std::size_t d = 0; d < e.size(); ++d) {
            out.grad[i][d] = 2.0 * inv_n * (e[d] - state.ref[d]);
        }
    }
    return out;
}

Vec merge_embeddings(std::span<const double> object_embedding, const ContextState& state) {
    if (!state.initialized) {
        throw StateError("context reference is not initialized");
    }
    Vec merged(object_embedding.begin(), object_embedding.end());
    merged.insert(merged.end(), state.ref.begin(), state.ref.end());
    return merged;
}

}  // namespace tinyema
