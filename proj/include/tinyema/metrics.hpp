#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tinyema/harness.hpp"
#include "tinyema/manifest.hpp"
#include "tinyema/scenegen.hpp"

namespace tinyema {

struct MatchedPair {
    std::size_t pred = 0;
    std::size_t gt = 0;
    double distance = 0.0;
};

struct MatchResult {
    int true_positives = 0;
    int false_positives = 0;
    int false_negatives = 0;
    std::vector<MatchedPair> pairs;
    std::vector<std::size_t> order;      // prediction indices by descending confidence
    std::vector<bool> is_true_positive;  // aligned with `order`
};

/// Greedy center-distance matching: predictions in descending confidence
/// (ties by index) take the nearest unmatched ground truth within `tol`.
MatchResult match_detections(std::span<const Detection> preds, std::span<const Point2> gts, double tol);
MatchResult match_detections(std::span<const Detection> preds, std::span<const Annotation> gts, double tol);

std::vector<Point2> gt_points(std::span<const ObjectRecord> objects);
std::vector<Point2> gt_points(std::span<const Annotation> annotations);

struct ImageEval {
    std::vector<Detection> preds;
    std::vector<Point2> gts;
};

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
    double confidence = 0.0;
};

/// Cumulative precision/recall after each prediction, pooled over images in
/// descending confidence.
std::vector<PrPoint> pr_curve(std::span<const ImageEval> images, double tol);

/// All-point interpolated AP. Throws ArgumentError when there are no ground
/// truths.
double average_precision(std::span<const ImageEval> images, double tol);
double average_precision(std::span<const Detection> preds, std::span<const Point2> gts, double tol);

struct Prf1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

Prf1 prf1(const MatchResult& match);
Prf1 prf1(int tp, int fp, int fn);

/// How trained detectors are scored.
struct EvalSettings {
    PredictOptions predict;             // low threshold so the full PR curve is ranked
    double match_tolerance = 6.0;       // pixels, twice the object radius
    double operating_threshold = 0.5;   // confidence cut for precision/recall/F1
    int k = 5;
};

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1, then k contiguous test blocks whose sizes differ
/// by at most one. Throws ArgumentError unless 2 <= k <= n.
std::vector<Fold> kfold_split(std::size_t n, int k, std::uint64_t seed);

}  // namespace tinyema
