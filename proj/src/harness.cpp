#include "tinyema/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "tinyema/errors.hpp"
#include "tinyema/image_io.hpp"
#include "tinyema/log.hpp"
#include "tinyema/metrics.hpp"
#include "tinyema/random.hpp"

namespace tinyema {
namespace {

constexpr double kObjectPrior = 0.02;

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

// Standardized descriptors pass through a soft clip so a single extreme
// patch cannot dominate the consistency curvature.
void standardized(const ModelParams& params, std::span<const double> desc, double* out) {
    const double clip = params.desc_clip;
    for (std::size_t q = 0; q < desc.size(); ++q) {
        const double z = (desc[q] - params.desc_shift[q]) * params.desc_scale[q];
        out[q] = clip > 0.0 ? clip * std::tanh(z / clip) : z;
    }
}

// Bias contributed by the context suffix of the merged scorer. An unseeded
// reference contributes nothing.
double context_bias(const ModelParams& params, const ContextState& context) {
    if (!context.initialized) return 0.0;
    const auto d = static_cast<std::size_t>(params.embedding_dim);
    return dot(params.merged_w.data() + d, context.ref.data(), context.ref.size());
}

std::vector<BBox> expanded_boxes(std::span<const BBox> boxes, double gamma, int w, int h) {
    std::vector<BBox> out;
    out.reserve(boxes.size());
    for (const auto& b : boxes) {
        out.push_back(expand_box(b, gamma, w, h));
    }
    return out;
}

}  // namespace

std::string ComponentSet::label() const {
    if (!aa && !es && !cr) return "Baseline";
    if (aa && es && cr) return "+All";
    std::string s;
    if (aa) s += "+AA";
    if (es) s += "+ES";
    if (cr) s += "+CR";
    return s;
}

ModelParams ModelParams::zeros(int descriptor_dim, int embedding_dim, int context_dim) {
    if (descriptor_dim < 1 || embedding_dim < 1 || context_dim < 1) {
        throw ArgumentError("model dimensions must be positive");
    }
    const auto p = static_cast<std::size_t>(descriptor_dim);
    const auto d = static_cast<std::size_t>(embedding_dim);
    const auto c = static_cast<std::size_t>(context_dim);
    ModelParams m;
    m.descriptor_dim = descriptor_dim;
    m.embedding_dim = embedding_dim;
    m.context_dim = context_dim;
    m.proj.assign(d * p, 0.0);
    m.proj_bias.assign(d, 0.0);
    m.obj_w.assign(d, 0.0);
    m.obj_b.assign(1, 0.0);
    m.merged_w.assign(d + c, 0.0);
    m.merged_b.assign(1, 0.0);
    m.offset_w.assign(2 * d, 0.0);
    m.offset_b.assign(2, 0.0);
    m.desc_shift.assign(p, 0.0);
    m.desc_scale.assign(p, 1.0);
    return m;
}

ModelParams ModelParams::initialize(int descriptor_dim, int embedding_dim, int context_dim, std::uint64_t seed,
                                    double init_scale, double head_scale) {
    ModelParams m = zeros(descriptor_dim, embedding_dim, context_dim);
    Rng rng(seed);
    const double proj_scale = init_scale / std::sqrt(static_cast<double>(descriptor_dim));
    for (double& v : m.proj) v = proj_scale * rng.normal();
    for (double& v : m.obj_w) v = head_scale * rng.normal();
    for (std::size_t i = 0; i < static_cast<std::size_t>(embedding_dim); ++i) {
        m.merged_w[i] = m.obj_w[i];
    }
    for (double& v : m.offset_w) v = 0.01 * rng.normal();
    const double prior_logit = std::log(kObjectPrior / (1.0 - kObjectPrior));
    m.obj_b[0] = prior_logit;
    m.merged_b[0] = prior_logit;
    return m;
}

std::array<Vec*, 8> ModelParams::blocks() {
    return {&proj, &proj_bias, &obj_w, &obj_b, &merged_w, &merged_b, &offset_w, &offset_b};
}

std::array<const Vec*, 8> ModelParams::blocks() const {
    return {&proj, &proj_bias, &obj_w, &obj_b, &merged_w, &merged_b, &offset_w, &offset_b};
}

ModelStates ModelStates::fresh(const TrainConfig& config) {
    ModelStates s;
    s.aug = EmaScalarPair(config.rho);
    s.stabilizer = StabilizerState(static_cast<std::size_t>(config.embedding_dim), config.rho, config.lambda,
                                   config.delta);
    s.context = ContextState(static_cast<std::size_t>(config.context_dim()), config.rho, config.gamma);
    return s;
}

Point2 PatchGrid::cell_center(std::size_t i) const {
    const auto r = static_cast<int>(i / static_cast<std::size_t>(cols));
    const auto c = static_cast<int>(i % static_cast<std::size_t>(cols));
    return {(c + 0.5) * stride, (r + 0.5) * stride};
}

PatchGrid compute_descriptors(const ImageBuffer& image, int patch_size) {
    if (patch_size < 4) {
        throw ArgumentError("patch size must be at least 4");
    }
    if (image.width() < patch_size || image.height() < patch_size) {
        throw ArgumentError("image is smaller than one patch");
    }
    PatchGrid g;
    g.stride = patch_size;
    g.cols = image.width() / patch_size;
    g.rows = image.height() / patch_size;
    g.descriptors.assign(g.cell_count() * kDescriptorSize, 0.0);

    const int s = patch_size;
    const int inner_lo = s / 4;
    const int inner_hi = s - s / 4;
    const double n = static_cast<double>(s * s);
    const double n_inner = static_cast<double>((inner_hi - inner_lo) * (inner_hi - inner_lo));
    const double n_outer = n - n_inner;
    const double n_pairs_axis = static_cast<double>(s * (s - 1));
    const double n_pairs_diag = static_cast<double>((s - 1) * (s - 1));

    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            const int x0 = c * s;
            const int y0 = r * s;
            double sum = 0.0;
            double inner = 0.0;
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            double gx = 0.0;
            double gy = 0.0;
            double gd = 0.0;
            double ga = 0.0;
            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    const double v = image.at(x0 + x, y0 + y);
                    sum += v;
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                    if (x >= inner_lo && x < inner_hi && y >= inner_lo && y < inner_hi) inner += v;
                    if (x + 1 < s) gx += std::abs(image.at(x0 + x + 1, y0 + y) - v);
                    if (y + 1 < s) gy += std::abs(image.at(x0 + x, y0 + y + 1) - v);
                    if (x + 1 < s && y + 1 < s) {
                        gd += std::abs(image.at(x0 + x + 1, y0 + y + 1) - v);
                        ga += std::abs(image.at(x0 + x, y0 + y + 1) - image.at(x0 + x + 1, y0 + y));
                    }
                }
            }
            const double mean = sum / n;
            double ss = 0.0;
            for (int y = 0; y < s; ++y) {
                for (int x = 0; x < s; ++x) {
                    const double d = image.at(x0 + x, y0 + y) - mean;
                    ss += d * d;
                }
            }
            double* out = g.descriptors.data() + (static_cast<std::size_t>(r) * static_cast<std::size_t>(g.cols) + static_cast<std::size_t>(c)) * kDescriptorSize;
            out[0] = mean;
            out[1] = std::sqrt(ss / n);
            out[2] = lo;
            out[3] = hi;
            out[4] = inner / n_inner - (sum - inner) / n_outer;
            out[5] = gx / n_pairs_axis;
            out[6] = gy / n_pairs_axis;
            out[7] = gd / n_pairs_diag;
            out[8] = ga / n_pairs_diag;
        }
    }
    return g;
}

void fit_descriptor_scaler(ModelParams& params, std::span<const PatchGrid* const> grids) {
    std::vector<double> sum(kDescriptorSize, 0.0);
    std::vector<double> sq(kDescriptorSize, 0.0);
    double n = 0.0;
    for (const PatchGrid* g : grids) {
        for (std::size_t i = 0; i < g->cell_count(); ++i) {
            const auto desc = g->cell(i);
            for (int q = 0; q < kDescriptorSize; ++q) sum[q] += desc[q];
        }
        n += static_cast<double>(g->cell_count());
    }
    if (n == 0.0) return;
    for (int q = 0; q < kDescriptorSize; ++q) sum[q] /= n;
    for (const PatchGrid* g : grids) {
        for (std::size_t i = 0; i < g->cell_count(); ++i) {
            const auto desc = g->cell(i);
            for (int q = 0; q < kDescriptorSize; ++q) {
                const double v = desc[q] - sum[q];
                sq[q] += v * v;
            }
        }
    }
    params.desc_shift.assign(kDescriptorSize, 0.0);
    params.desc_scale.assign(kDescriptorSize, 1.0);
    for (int q = 0; q < kDescriptorSize; ++q) {
        const double sd = std::sqrt(sq[q] / n);
        params.desc_shift[q] = sum[q];
        if (sd > 1e-9) params.desc_scale[q] = 1.0 / sd;
    }
}

Features embed(const PatchGrid& grid, const ModelParams& params) {
    if (params.descriptor_dim != kDescriptorSize) {
        throw ArgumentError("model descriptor dimension does not match the patch descriptor");
    }
    const auto d = static_cast<std::size_t>(params.embedding_dim);
    Features f;
    f.fmap = FeatureMap(params.embedding_dim, grid.rows, grid.cols, grid.stride);
    f.embeddings.resize(grid.cell_count());
    double desc[kDescriptorSize];
    for (std::size_t i = 0; i < grid.cell_count(); ++i) {
        standardized(params, grid.cell(i), desc);
        auto cell = f.fmap.cell(i);
        for (std::size_t k = 0; k < d; ++k) {
            cell[k] = params.proj_bias[k] + dot(params.proj.data() + k * kDescriptorSize, desc, kDescriptorSize);
        }
        f.embeddings[i].vector.assign(cell.begin(), cell.end());
        f.embeddings[i].center = grid.cell_center(i);
    }
    return f;
}

Features extract_features(const ImageBuffer& image, const ModelParams& params, int patch_size) {
    return embed(compute_descriptors(image, patch_size), params);
}

CellTargets make_targets(const PatchGrid& grid, std::span<const ObjectRecord> objects) {
    CellTargets t;
    t.positive.assign(grid.cell_count(), 0);
    t.offset.assign(grid.cell_count(), {0.0, 0.0});
    std::vector<double> best(grid.cell_count(), std::numeric_limits<double>::infinity());
    for (const auto& o : objects) {
        const int c = static_cast<int>(std::floor(o.cx / grid.stride));
        const int r = static_cast<int>(std::floor(o.cy / grid.stride));
        if (c < 0 || r < 0 || c >= grid.cols || r >= grid.rows) continue;
        const std::size_t i = static_cast<std::size_t>(r) * static_cast<std::size_t>(grid.cols) + static_cast<std::size_t>(c);
        const Point2 cc = grid.cell_center(i);
        const double dx = (o.cx - cc.x) / grid.stride;
        const double dy = (o.cy - cc.y) / grid.stride;
        const double d2 = dx * dx + dy * dy;
        // Several objects in one cell: keep the one nearest the cell center.
        if (d2 < best[i]) {
            best[i] = d2;
            t.positive[i] = 1;
            t.offset[i] = {dx, dy};
        }
    }
    for (std::size_t i = 0; i < t.positive.size(); ++i) {
        if (t.positive[i]) t.positive_cells.push_back(i);
    }
    return t;
}

std::vector<double> cell_scores(const Features& features, const ModelParams& params, const ContextState* context) {
    const auto d = static_cast<std::size_t>(params.embedding_dim);
    std::vector<double> scores(features.embeddings.size());
    const bool merged = context != nullptr;
    const double* w = merged ? params.merged_w.data() : params.obj_w.data();
    const double b = merged ? params.merged_b[0] + context_bias(params, *context) : params.obj_b[0];
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = sigmoid(b + dot(w, features.fmap.cell(i).data(), d));
    }
    return scores;
}

std::vector<Detection> predict_from_grid(const PatchGrid& grid, int image_w, int image_h, const ModelParams& params,
                                         const ContextState* context, const PredictOptions& options) {
    const Features f = embed(grid, params);
    const std::vector<double> scores = cell_scores(f, params, context);
    const auto d = static_cast<std::size_t>(params.embedding_dim);

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] >= options.threshold) candidates.push_back(i);
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    const double r2 = options.nms_radius * options.nms_radius;
    const double max_x = std::nextafter(static_cast<double>(image_w), 0.0);
    const double max_y = std::nextafter(static_cast<double>(image_h), 0.0);
    std::vector<Detection> kept;
    for (std::size_t i : candidates) {
        const auto e = f.fmap.cell(i);
        const Point2 cc = grid.cell_center(i);
        const double ox = params.offset_b[0] + dot(params.offset_w.data(), e.data(), d);
        const double oy = params.offset_b[1] + dot(params.offset_w.data() + d, e.data(), d);
        const Point2 p{std::clamp(cc.x + ox * grid.stride, 0.0, max_x), std::clamp(cc.y + oy * grid.stride, 0.0, max_y)};
        bool suppressed = false;
        for (const auto& k : kept) {
            const double dx = k.center.x - p.x;
            const double dy = k.center.y - p.y;
            if (dx * dx + dy * dy <= r2) {
                suppressed = true;
                break;
            }
        }
        if (suppressed) continue;
        const double br = options.box_radius;
        kept.push_back({p, BBox{p.x - br, p.y - br, 2 * br, 2 * br}, scores[i]});
    }
    return kept;
}

std::vector<Detection> predict(const ImageBuffer& image, const ModelParams& params, const ContextState* context,
                               const PredictOptions& options) {
    return predict_from_grid(compute_descriptors(image, options.patch_size), image.width(), image.height(), params,
                             context, options);
}

BatchForward forward(const ModelParams& params, std::span<const TrainingSample> samples, const TrainConfig& config) {
    BatchForward fwd;
    fwd.features.reserve(samples.size());
    for (const auto& s : samples) {
        fwd.features.push_back(embed(*s.grid, params));
    }
    if (config.components.es) {
        auto& sb = fwd.stabilizer;
        for (std::size_t si = 0; si < samples.size(); ++si) {
            std::vector<Embedding> local;
            for (std::size_t cell : samples[si].targets->positive_cells) {
                local.push_back(fwd.features[si].embeddings[cell]);
                sb.origin.emplace_back(si, cell);
            }
            const std::size_t offset = sb.embeddings.size();
            for (auto& g : group_embeddings(local, config.delta)) {
                g.id = static_cast<int>(sb.groups.size());
                for (auto& m : g.members) m += offset;
                sb.groups.push_back(std::move(g));
            }
            sb.embeddings.insert(sb.embeddings.end(), std::make_move_iterator(local.begin()),
                                 std::make_move_iterator(local.end()));
        }
    }
    if (config.components.cr) {
        auto& cb = fwd.context;
        for (std::size_t si = 0; si < samples.size(); ++si) {
            const auto& fm = fwd.features[si].fmap;
            for (const auto& box : samples[si].context_boxes) {
                cb.plans.push_back(roi_pool_plan(fm.rows, fm.cols, fm.stride, box, config.pool_grid));
                cb.embeddings.push_back(apply_pool(fm, cb.plans.back()));
                cb.sample.push_back(si);
            }
        }
    }
    return fwd;
}

void update_states(const BatchForward& fwd, ModelStates& states, const TrainConfig& config) {
    if (config.components.es && !fwd.stabilizer.embeddings.empty()) {
        const auto& sb = fwd.stabilizer;
        update_cluster_means(sb.groups, sb.embeddings, states.stabilizer);
        update_global_mean(sb.embeddings, states.stabilizer);
        update_stack(sb.groups, sb.embeddings, states.stabilizer);
    }
    if (config.components.cr) {
        update_context_ref(fwd.context.embeddings, states.context);
    }
}

LossResult total_loss(const ModelParams& params, const BatchForward& fwd, std::span<const TrainingSample> samples,
                      const ModelStates& states, const TrainConfig& config) {
    if (fwd.features.size() != samples.size()) {
        throw ArgumentError("forward pass does not match the batch");
    }
    const auto d = static_cast<std::size_t>(params.embedding_dim);
    const auto p = static_cast<std::size_t>(params.descriptor_dim);
    if (config.components.cr && static_cast<int>(states.context.dim) != params.context_dim) {
        throw ArgumentError("context state dimension does not match the merged scorer");
    }

    LossResult out;
    out.grad = ModelParams::zeros(params.descriptor_dim, params.embedding_dim, params.context_dim);
    ModelParams& g = out.grad;
    LossBreakdown& lb = out.breakdown;

    std::size_t n_cells = 0;
    std::size_t n_pos = 0;
    for (const auto& s : samples) {
        n_cells += s.grid->cell_count();
        n_pos += s.targets->positive_cells.size();
    }
    if (n_cells == 0) {
        throw ArgumentError("empty batch");
    }
    const double inv_cells = 1.0 / static_cast<double>(n_cells);
    const double inv_pos = n_pos > 0 ? 1.0 / static_cast<double>(n_pos) : 0.0;

    const bool merged = config.components.cr;
    const double* score_w = merged ? params.merged_w.data() : params.obj_w.data();
    const double score_b = merged ? params.merged_b[0] + context_bias(params, states.context) : params.obj_b[0];
    double* score_gw = merged ? g.merged_w.data() : g.obj_w.data();
    double score_gb = 0.0;

    // dE[s] holds dL/de for every cell of sample s.
    std::vector<std::vector<double>> d_emb(samples.size());
    for (std::size_t si = 0; si < samples.size(); ++si) {
        const auto& feat = fwd.features[si];
        const auto& tgt = *samples[si].targets;
        const std::size_t cells = feat.embeddings.size();
        auto& de = d_emb[si];
        de.assign(cells * d, 0.0);
        for (std::size_t i = 0; i < cells; ++i) {
            const double* e = feat.fmap.cell(i).data();
            const double z = score_b + dot(score_w, e, d);
            const double y = tgt.positive[i] ? 1.0 : 0.0;
            lb.obj += inv_cells * (softplus(z) - y * z);
            const double dz = inv_cells * (sigmoid(z) - y);
            score_gb += dz;
            double* dei = de.data() + i * d;
            for (std::size_t k = 0; k < d; ++k) {
                score_gw[k] += dz * e[k];
                dei[k] += dz * score_w[k];
            }
        }
        for (std::size_t i : tgt.positive_cells) {
            const double* e = feat.fmap.cell(i).data();
            double* dei = de.data() + i * d;
            for (std::size_t a = 0; a < 2; ++a) {
                const double* wa = params.offset_w.data() + a * d;
                const double diff = params.offset_b[a] + dot(wa, e, d) - tgt.offset[i][a];
                lb.bbox += inv_pos * diff * diff;
                const double dout = 2.0 * inv_pos * diff;
                g.offset_b[a] += dout;
                double* gwa = g.offset_w.data() + a * d;
                for (std::size_t k = 0; k < d; ++k) {
                    gwa[k] += dout * e[k];
                    dei[k] += dout * wa[k];
                }
            }
        }
    }
    if (merged) {
        g.merged_b[0] += score_gb;
        if (states.context.initialized) {
            for (std::size_t k = 0; k < states.context.ref.size(); ++k) {
                g.merged_w[d + k] += score_gb * states.context.ref[k];
            }
        }
    } else {
        g.obj_b[0] += score_gb;
    }

    if (config.components.es && !fwd.stabilizer.embeddings.empty()) {
        const auto& sb = fwd.stabilizer;
        const LossWithGrad cl = cluster_loss(sb.groups, sb.embeddings, states.stabilizer);
        const LossWithGrad st = stack_loss(sb.groups, sb.embeddings, states.stabilizer);
        lb.cluster = cl.value;
        lb.stack = st.value;
        for (std::size_t j = 0; j < sb.embeddings.size(); ++j) {
            const auto [si, cell] = sb.origin[j];
            double* dei = d_emb[si].data() + cell * d;
            for (std::size_t k = 0; k < d; ++k) {
                dei[k] += config.lambda1 * cl.grad[j][k] + config.lambda2 * st.grad[j][k];
            }
        }
    }

    if (config.components.cr && !fwd.context.embeddings.empty()) {
        const auto& cb = fwd.context;
        const LossWithGrad cx = context_loss(cb.embeddings, states.context);
        lb.context = cx.value;
        for (std::size_t j = 0; j < cb.embeddings.size(); ++j) {
            const auto& plan = cb.plans[j];
            auto& de = d_emb[cb.sample[j]];
            for (std::size_t b = 0; b < plan.bins.size(); ++b) {
                const double* gb = cx.grad[j].data() + b * d;
                for (const auto& tap : plan.bins[b]) {
                    double* dei = de.data() + tap.cell * d;
                    const double w = config.lambda3 * tap.weight;
                    for (std::size_t k = 0; k < d; ++k) dei[k] += w * gb[k];
                }
            }
        }
    }

    // Back through the linear projection.
    for (std::size_t si = 0; si < samples.size(); ++si) {
        const PatchGrid& grid = *samples[si].grid;
        const auto& de = d_emb[si];
        double desc[kDescriptorSize];
        for (std::size_t i = 0; i < grid.cell_count(); ++i) {
            const double* dei = de.data() + i * d;
            standardized(params, grid.cell(i), desc);
            for (std::size_t k = 0; k < d; ++k) {
                const double v = dei[k];
                if (v == 0.0) continue;
                g.proj_bias[k] += v;
                double* row = g.proj.data() + k * p;
                for (std::size_t q = 0; q < p; ++q) row[q] += v * desc[q];
            }
        }
    }

    lb.cls = 0.0;
    lb.total = lb.cls + lb.bbox + lb.obj + config.lambda1 * lb.cluster + config.lambda2 * lb.stack +
               config.lambda3 * lb.context;
    return out;
}

LossResult total_loss(const ModelParams& params, std::span<const TrainingSample> samples, const ModelStates& states,
                      const TrainConfig& config) {
    return total_loss(params, forward(params, samples, config), samples, states, config);
}

Dataset Dataset::load(const Manifest& manifest) {
    Dataset ds;
    ds.manifest = manifest;
    ds.images.reserve(manifest.size());
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        ImageBuffer img = read_pgm(manifest.image_path(i));
        const auto& rec = manifest.records[i];
        if (img.width() != rec.width || img.height() != rec.height) {
            throw IoError(manifest.image_path(i).string(), "image size disagrees with manifest");
        }
        ds.images.push_back(std::move(img));
    }
    return ds;
}

Dataset Dataset::from_memory(Manifest manifest, std::vector<ImageBuffer> images) {
    if (manifest.size() != images.size()) {
        throw ArgumentError("manifest and image list differ in length");
    }
    Dataset ds;
    ds.manifest = std::move(manifest);
    ds.images = std::move(images);
    return ds;
}

void Dataset::cache_grids(int patch_size) {
    if (!grids.empty() && grids.front().stride == patch_size) return;
    grids.clear();
    grids.reserve(images.size());
    for (const auto& img : images) grids.push_back(compute_descriptors(img, patch_size));
}

namespace {

void sgd_step(ModelParams& params, const ModelParams& grad, double lr) {
    auto pb = params.blocks();
    auto gb = grad.blocks();
    for (std::size_t b = 0; b < pb.size(); ++b) {
        Vec& v = *pb[b];
        const Vec& gv = *gb[b];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * gv[i];
    }
}

void accumulate(LossBreakdown& acc, const LossBreakdown& x, double w) {
    acc.cls += w * x.cls;
    acc.bbox += w * x.bbox;
    acc.obj += w * x.obj;
    acc.cluster += w * x.cluster;
    acc.stack += w * x.stack;
    acc.context += w * x.context;
    acc.total += w * x.total;
}

void validate_train_config(const TrainConfig& c) {
    if (c.epochs < 0) throw ArgumentError("epochs must be non-negative");
    if (c.batch_size < 1) throw ArgumentError("batch_size must be positive");
    if (!(c.learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
    if (c.embedding_dim < 1 || c.pool_grid < 1) throw ArgumentError("model dimensions must be positive");
}

}  // namespace

TrainResult train(const Dataset& data, std::span<const std::size_t> train_ids, const TrainConfig& config,
                  const ValidationSpec* validation) {
    validate_train_config(config);
    if (data.grids.size() != data.size() || (!data.grids.empty() && data.grids.front().stride != config.patch_size)) {
        throw ArgumentError("dataset descriptor cache is missing or uses another patch size");
    }
    for (std::size_t id : train_ids) {
        if (id >= data.size()) throw ArgumentError("training id out of range");
    }

    TrainResult result;
    result.params = ModelParams::initialize(kDescriptorSize, config.embedding_dim, config.context_dim(),
                                            mix_seed(config.seed, 0x1417), config.init_scale,
                                            config.head_init_scale);
    result.params.desc_clip = config.descriptor_clip;
    result.states = ModelStates::fresh(config);
    {
        // With AA the model only ever sees gain-normalized images, so the
        // scaler is fitted on the training set normalized toward its own
        // pooled statistics rather than on the raw grids.
        std::vector<PatchGrid> normalized;
        std::vector<const PatchGrid*> fit;
        if (config.components.aa && !train_ids.empty()) {
            std::vector<ImageBuffer> raw;
            for (std::size_t id : train_ids) raw.push_back(data.images[id]);
            EmaScalarPair pooled(1.0);
            pooled.observe(batch_stats(raw));
            for (const auto& img : raw) {
                AugParams p = derive_params(local_stats(img, Region::full(img)), pooled, config.gains);
                p.eta = 0.0;
                normalized.push_back(compute_descriptors(apply_augmentation(img, p, NoiseSeed{0}), config.patch_size));
            }
            for (const auto& g : normalized) fit.push_back(&g);
        } else {
            for (std::size_t id : train_ids) fit.push_back(&data.grids[id]);
        }
        fit_descriptor_scaler(result.params, fit);
    }

    std::vector<CellTargets> targets(data.size());
    for (std::size_t id : train_ids) {
        targets[id] = make_targets(data.grids[id], data.manifest.records[id].objects);
    }

    std::vector<std::size_t> order(train_ids.begin(), train_ids.end());
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffler(mix_seed(config.seed, 0x5000 + static_cast<std::uint64_t>(epoch)));
        shuffler.shuffle(std::span<std::size_t>(order));

        LossBreakdown epoch_loss;
        const std::size_t n_batches = (order.size() + batch - 1) / batch;
        for (std::size_t bi = 0; bi < n_batches; ++bi) {
            const std::size_t begin = bi * batch;
            const std::size_t end = std::min(order.size(), begin + batch);
            const std::span<const std::size_t> ids(order.data() + begin, end - begin);

            std::vector<PatchGrid> augmented;
            if (config.components.aa) {
                std::vector<ImageBuffer> raw;
                raw.reserve(ids.size());
                for (std::size_t id : ids) raw.push_back(data.images[id]);
                const std::uint64_t noise = mix_seed(config.seed, (static_cast<std::uint64_t>(epoch) << 32) | bi);
                AugmentedBatch ab = augment_batch(raw, result.states.aug, config.gains, NoiseSeed{noise});
                result.states.aug = ab.state;
                for (const auto& img : ab.images) augmented.push_back(compute_descriptors(img, config.patch_size));
            }

            std::vector<TrainingSample> samples(ids.size());
            for (std::size_t k = 0; k < ids.size(); ++k) {
                const std::size_t id = ids[k];
                auto& s = samples[k];
                s.grid = config.components.aa ? &augmented[k] : &data.grids[id];
                s.targets = &targets[id];
                if (config.components.cr) {
                    const auto& rec = data.manifest.records[id];
                    std::vector<BBox> boxes;
                    if (config.context_boxes == ContextBoxSource::ground_truth) {
                        for (const auto& o : rec.objects) boxes.push_back(o.box());
                    } else {
                        PredictOptions po;
                        po.patch_size = config.patch_size;
                        po.threshold = config.candidate_threshold;
                        po.box_radius = config.box_radius;
                        po.nms_radius = 2.0 * config.box_radius;
                        for (const auto& det : predict_from_grid(*s.grid, rec.width, rec.height, result.params,
                                                                 &result.states.context, po)) {
                            boxes.push_back(det.box);
                        }
                    }
                    s.context_boxes = expanded_boxes(boxes, config.gamma, rec.width, rec.height);
                }
            }

            const BatchForward fwd = forward(result.params, samples, config);
            update_states(fwd, result.states, config);
            const LossResult loss = total_loss(result.params, fwd, samples, result.states, config);
            sgd_step(result.params, loss.grad, config.learning_rate);

            result.iterations.push_back(loss.breakdown);
            accumulate(epoch_loss, loss.breakdown, 1.0 / static_cast<double>(n_batches));
        }

        EpochLog log_entry;
        log_entry.epoch = epoch + 1;
        log_entry.loss = epoch_loss;
        if (validation != nullptr && !validation->ids.empty()) {
            const Detector det{config, result.params, result.states};
            std::vector<ImageEval> evals;
            for (std::size_t id : validation->ids) {
                evals.push_back({det.detect(data, id, validation->predict), gt_points(data.manifest.records[id].objects)});
            }
            try {
                log_entry.val_ap = average_precision(evals, validation->match_tolerance);
            } catch (const ArgumentError&) {
                log_entry.val_ap.reset();
            }
        }
        log_entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log::debug("epoch " + std::to_string(epoch + 1) + " total " + std::to_string(epoch_loss.total));
        result.epochs.push_back(log_entry);
    }
    return result;
}

ImageBuffer Detector::normalize(const ImageBuffer& image) const {
    if (!config.components.aa || !states.aug.initialized) return image;
    AugParams p = derive_params(local_stats(image, Region::full(image)), states.aug, config.gains);
    p.eta = 0.0;
    return apply_augmentation(image, p, NoiseSeed{0});
}

std::vector<Detection> Detector::detect(const ImageBuffer& image, const PredictOptions& options) const {
    const ContextState* ctx = config.components.cr ? &states.context : nullptr;
    return predict(normalize(image), params, ctx, options);
}

std::vector<Detection> Detector::detect(const Dataset& data, std::size_t id, const PredictOptions& options) const {
    const ContextState* ctx = config.components.cr ? &states.context : nullptr;
    const ImageBuffer& img = data.images.at(id);
    if (!config.components.aa && id < data.grids.size() && data.grids[id].stride == options.patch_size) {
        return predict_from_grid(data.grids[id], img.width(), img.height(), params, ctx, options);
    }
    return predict(normalize(img), params, ctx, options);
}

}  // namespace tinyema
