#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tinyema/augment.hpp"
#include "tinyema/context.hpp"
#include "tinyema/image.hpp"
#include "tinyema/manifest.hpp"
#include "tinyema/stabilize.hpp"

namespace tinyema {

/// Patch descriptor layout: mean, std, min, max, center-minus-surround, then
/// mean absolute differences along x, y, the diagonal and the anti-diagonal.
inline constexpr int kDescriptorSize = 9;

struct ComponentSet {
    bool aa = false;
    bool es = false;
    bool cr = false;

    /// "Baseline", "+AA", "+AA+ES", ..., "+All".
    std::string label() const;
    bool operator==(const ComponentSet&) const = default;
};

enum class ContextBoxSource { ground_truth, predicted };

struct TrainConfig {
    int epochs = 20;
    int batch_size = 1;
    double learning_rate = 0.01;
    double lambda1 = 0.1;  // clustering consistency weight
    double lambda2 = 0.1;  // stacking consistency weight
    double lambda3 = 0.1;  // context consistency weight
    ComponentSet components;
    double rho = 0.05;
    double delta = 30.0;
    double gamma = 0.5;
    double lambda = 1.0;  // cluster-to-global weight inside the clustering loss
    AugGains gains{0.5, 0.5, 0.01};
    int embedding_dim = 16;
    int patch_size = 8;
    int pool_grid = 2;
    double box_radius = 3.0;  // half side of emitted detection boxes
    double init_scale = 0.02;      // std of the initial projection, times 1/sqrt(P)
    double head_init_scale = 3.0;  // std of the initial objectness weights
    double descriptor_clip = 8.0;  // tanh clip on standardized descriptors, 0 disables
    ContextBoxSource context_boxes = ContextBoxSource::ground_truth;
    double candidate_threshold = 0.5;  // score cut for predicted context boxes
    std::uint64_t seed = 1;

    int context_dim() const noexcept { return embedding_dim * pool_grid * pool_grid; }
};

/// Learnable weights. Every block is a flat vector so gradients share the
/// layout and finite-difference checks can walk blocks uniformly.
struct ModelParams {
    int descriptor_dim = kDescriptorSize;
    int embedding_dim = 16;
    int context_dim = 64;
    Vec proj;        // embedding_dim x descriptor_dim, row-major
    Vec proj_bias;   // embedding_dim
    Vec obj_w;       // embedding_dim
    Vec obj_b;       // 1
    Vec merged_w;    // embedding_dim + context_dim
    Vec merged_b;    // 1
    Vec offset_w;    // 2 x embedding_dim
    Vec offset_b;    // 2
    // Frozen descriptor standardization, (desc - shift) * scale, fitted on the
    // training images before the first step. Not learned.
    Vec desc_shift;  // descriptor_dim, zero by default
    Vec desc_scale;  // descriptor_dim, one by default
    double desc_clip = 0.0;

    static ModelParams zeros(int descriptor_dim, int embedding_dim, int context_dim);
    static ModelParams initialize(int descriptor_dim, int embedding_dim, int context_dim, std::uint64_t seed,
                                  double init_scale = 1.0, double head_scale = 0.1);

    static constexpr std::array<const char*, 8> kBlockNames = {"proj",     "proj_bias", "obj_w",    "obj_b",
                                                               "merged_w", "merged_b",  "offset_w", "offset_b"};
    std::array<Vec*, 8> blocks();
    std::array<const Vec*, 8> blocks() const;

    bool operator==(const ModelParams&) const = default;
};

/// Per-run EMA references, one per component.
struct ModelStates {
    EmaScalarPair aug;
    StabilizerState stabilizer;
    ContextState context;

    static ModelStates fresh(const TrainConfig& config);
    bool operator==(const ModelStates&) const = default;
};

/// Fixed descriptors on the non-overlapping patch grid.
struct PatchGrid {
    int rows = 0;
    int cols = 0;
    int stride = 0;
    std::vector<double> descriptors;  // cell-major, kDescriptorSize per cell

    std::size_t cell_count() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
    std::span<const double> cell(std::size_t i) const {
        return {descriptors.data() + i * kDescriptorSize, static_cast<std::size_t>(kDescriptorSize)};
    }
    Point2 cell_center(std::size_t i) const;
};

/// Throws ArgumentError when the image is smaller than one patch. Partial
/// patches at the right and bottom edges are dropped.
PatchGrid compute_descriptors(const ImageBuffer& image, int patch_size);

struct Features {
    FeatureMap fmap;                   // embeddings on the cell grid
    std::vector<Embedding> embeddings; // same vectors, one per cell, with patch centers
};

/// Per-feature mean and inverse standard deviation over every cell of the
/// given grids; near-constant features keep unit scale.
void fit_descriptor_scaler(ModelParams& params, std::span<const PatchGrid* const> grids);

Features embed(const PatchGrid& grid, const ModelParams& params);
Features extract_features(const ImageBuffer& image, const ModelParams& params, int patch_size);

/// Occupancy and offset targets; the positive cell of an object is the cell
/// containing its center. Offsets are in units of the stride.
struct CellTargets {
    std::vector<std::uint8_t> positive;
    std::vector<std::array<double, 2>> offset;
    std::vector<std::size_t> positive_cells;  // ascending
};

CellTargets make_targets(const PatchGrid& grid, std::span<const ObjectRecord> objects);

struct Detection {
    Point2 center;
    BBox box;
    double confidence = 0.0;
};

struct PredictOptions {
    int patch_size = 8;
    double threshold = 0.05;
    double nms_radius = 6.0;
    double box_radius = 3.0;
};

/// Per-cell objectness probabilities. A non-null `context` selects the merged
/// scorer (an unseeded reference contributes a zero suffix); null selects the
/// plain objectness head.
std::vector<double> cell_scores(const Features& features, const ModelParams& params, const ContextState* context);

/// Cells at or above threshold, shifted by their predicted offsets, then
/// greedy suppression of any candidate within nms_radius of a higher one.
std::vector<Detection> predict(const ImageBuffer& image, const ModelParams& params, const ContextState* context,
                               const PredictOptions& options);
std::vector<Detection> predict_from_grid(const PatchGrid& grid, int image_w, int image_h, const ModelParams& params,
                                         const ContextState* context, const PredictOptions& options);

/// One image of a training batch.
struct TrainingSample {
    const PatchGrid* grid = nullptr;
    const CellTargets* targets = nullptr;
    std::vector<BBox> context_boxes;  // expanded, image-clamped
};

/// Positive-cell embeddings of the whole batch, grouped within each image.
struct StabilizerBatch {
    std::vector<Embedding> embeddings;
    std::vector<EmbeddingGroup> groups;
    std::vector<std::pair<std::size_t, std::size_t>> origin;  // (sample, cell) per embedding
};

struct ContextBatch {
    std::vector<Vec> embeddings;
    std::vector<PoolPlan> plans;
    std::vector<std::size_t> sample;  // owning sample per embedding
};

struct BatchForward {
    std::vector<Features> features;
    StabilizerBatch stabilizer;
    ContextBatch context;
};

BatchForward forward(const ModelParams& params, std::span<const TrainingSample> samples, const TrainConfig& config);

/// ES then CR state updates from the current forward pass, each only when its
/// component is enabled.
void update_states(const BatchForward& fwd, ModelStates& states, const TrainConfig& config);

struct LossBreakdown {
    double cls = 0.0;
    double bbox = 0.0;
    double obj = 0.0;
    double cluster = 0.0;
    double stack = 0.0;
    double context = 0.0;
    double total = 0.0;
};

struct LossResult {
    LossBreakdown breakdown;
    ModelParams grad;
};

/// cls + bbox + obj + lambda1 * cluster + lambda2 * stack + lambda3 * context,
/// with analytic gradients for every parameter block. EMA states are treated
/// as constants.
LossResult total_loss(const ModelParams& params, const BatchForward& fwd, std::span<const TrainingSample> samples,
                      const ModelStates& states, const TrainConfig& config);
LossResult total_loss(const ModelParams& params, std::span<const TrainingSample> samples, const ModelStates& states,
                      const TrainConfig& config);

/// Images plus their manifest, with descriptor grids cached for unaugmented
/// training and evaluation.
struct Dataset {
    Manifest manifest;
    std::vector<ImageBuffer> images;
    std::vector<PatchGrid> grids;

    static Dataset load(const Manifest& manifest);
    static Dataset from_memory(Manifest manifest, std::vector<ImageBuffer> images);
    void cache_grids(int patch_size);
    std::size_t size() const noexcept { return images.size(); }
};

struct EpochLog {
    int epoch = 0;
    LossBreakdown loss;  // mean over batches
    std::optional<double> val_ap;
    double wall_seconds = 0.0;
};

struct TrainResult {
    ModelParams params;
    ModelStates states;
    std::vector<EpochLog> epochs;
    std::vector<LossBreakdown> iterations;
};

struct ValidationSpec {
    std::vector<std::size_t> ids;
    PredictOptions predict;
    double match_tolerance = 6.0;
};

/// Seeded SGD over `train_ids`. Deterministic in (dataset, ids, config).
TrainResult train(const Dataset& data, std::span<const std::size_t> train_ids, const TrainConfig& config,
                  const ValidationSpec* validation = nullptr);

/// A trained model ready for inference. With AA, inputs are gain-normalized
/// against the frozen reference (noise-free) before scoring; with CR, the
/// merged scorer and frozen context reference are used.
struct Detector {
    TrainConfig config;
    ModelParams params;
    ModelStates states;

    ImageBuffer normalize(const ImageBuffer& image) const;
    std::vector<Detection> detect(const ImageBuffer& image, const PredictOptions& options) const;
    std::vector<Detection> detect(const Dataset& data, std::size_t id, const PredictOptions& options) const;
};

}  // namespace tinyema
