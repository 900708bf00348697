#include "tinyema/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tinyema/errors.hpp"
#include "tinyema/random.hpp"

namespace tinyema {

MatchResult match_detections(std::span<const Detection> preds, std::span<const Point2> gts, double tol) {
    if (!(tol > 0.0)) {
        throw ArgumentError("match tolerance must be positive");
    }
    MatchResult m;
    m.order.resize(preds.size());
    std::iota(m.order.begin(), m.order.end(), 0);
    std::stable_sort(m.order.begin(), m.order.end(),
                     [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });

    std::vector<bool> taken(gts.size(), false);
    const double tol2 = tol * tol;
    m.is_true_positive.reserve(preds.size());
    for (std::size_t pi : m.order) {
        const Point2& p = preds[pi].center;
        std::size_t best = gts.size();
        double best_d2 = std::numeric_limits<double>::infinity();
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (taken[gi]) continue;
            const double dx = p.x - gts[gi].x;
            const double dy = p.y - gts[gi].y;
            const double d2 = dx * dx + dy * dy;
            if (d2 <= tol2 && d2 < best_d2) {
                best = gi;
                best_d2 = d2;
            }
        }
        if (best < gts.size()) {
            taken[best] = true;
            m.pairs.push_back({pi, best, std::sqrt(best_d2)});
            m.is_true_positive.push_back(true);
            ++m.true_positives;
        } else {
            m.is_true_positive.push_back(false);
            ++m.false_positives;
        }
    }
    m.false_negatives = static_cast<int>(gts.size()) - m.true_positives;
    return m;
}

std::vector<Point2> gt_points(std::span<const ObjectRecord> objects) {
    std::vector<Point2> pts;
    pts.reserve(objects.size());
    for (const auto& o : objects) pts.push_back({o.cx, o.cy});
    return pts;
}

std::vector<Point2> gt_points(std::span<const Annotation> annotations) {
    std::vector<Point2> pts;
    pts.reserve(annotations.size());
    for (const auto& a : annotations) pts.push_back(a.center);
    return pts;
}

MatchResult match_detections(std::span<const Detection> preds, std::span<const Annotation> gts, double tol) {
    const auto pts = gt_points(gts);
    return match_detections(preds, pts, tol);
}

std::vector<PrPoint> pr_curve(std::span<const ImageEval> images, double tol) {
    struct Ranked {
        double confidence;
        std::size_t image;
        std::size_t rank;
        bool tp;
    };
    std::vector<Ranked> all;
    std::size_t total_gt = 0;
    for (std::size_t ii = 0; ii < images.size(); ++ii) {
        const auto& im = images[ii];
        total_gt += im.gts.size();
        const MatchResult m = match_detections(im.preds, im.gts, tol);
        for (std::size_t r = 0; r < m.order.size(); ++r) {
            all.push_back({im.preds[m.order[r]].confidence, ii, r, m.is_true_positive[r]});
        }
    }
    std::sort(all.begin(), all.end(), [](const Ranked& a, const Ranked& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.image != b.image) return a.image < b.image;
        return a.rank < b.rank;
    });
    std::vector<PrPoint> curve;
    curve.reserve(all.size());
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (const auto& r : all) {
        (r.tp ? tp : fp) += 1;
        const double recall = total_gt > 0 ? static_cast<double>(tp) / static_cast<double>(total_gt) : 0.0;
        curve.push_back({recall, static_cast<double>(tp) / static_cast<double>(tp + fp), r.confidence});
    }
    return curve;
}

double average_precision(std::span<const ImageEval> images, double tol) {
    std::size_t total_gt = 0;
    for (const auto& im : images) total_gt += im.gts.size();
    if (total_gt == 0) {
        throw ArgumentError("average precision is undefined without ground truths");
    }
    const std::vector<PrPoint> curve = pr_curve(images, tol);
    // Right-to-left running maximum gives the interpolated precision.
    double ap = 0.0;
    double best = 0.0;
    for (std::size_t i = curve.size(); i-- > 0;) {
        best = std::max(best, curve[i].precision);
        const double prev_recall = i > 0 ? curve[i - 1].recall : 0.0;
        ap += (curve[i].recall - prev_recall) * best;
    }
    return ap;
}

double average_precision(std::span<const Detection> preds, std::span<const Point2> gts, double tol) {
    const ImageEval single{std::vector<Detection>(preds.begin(), preds.end()), std::vector<Point2>(gts.begin(), gts.end())};
    return average_precision(std::span<const ImageEval>(&single, 1), tol);
}

Prf1 prf1(int tp, int fp, int fn) {
    Prf1 r;
    r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

Prf1 prf1(const MatchResult& match) {
    return prf1(match.true_positives, match.false_positives, match.false_negatives);
}

std::vector<Fold> kfold_split(std::size_t n, int k, std::uint64_t seed) {
    if (k < 2 || static_cast<std::size_t>(k) > n) {
        throw ArgumentError("k-fold needs 2 <= k <= number of items");
    }
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(ids));

    const std::size_t kk = static_cast<std::size_t>(k);
    const std::size_t base = n / kk;
    const std::size_t extra = n % kk;
    std::vector<Fold> folds(kk);
    std::size_t start = 0;
    for (std::size_t f = 0; f < kk; ++f) {
        const std::size_t len = base + (f < extra ? 1 : 0);
        folds[f].test.assign(ids.begin() + static_cast<std::ptrdiff_t>(start),
                             ids.begin() + static_cast<std::ptrdiff_t>(start + len));
        std::sort(folds[f].test.begin(), folds[f].test.end());
        start += len;
    }
    for (std::size_t f = 0; f < kk; ++f) {
        for (std::size_t g = 0; g < kk; ++g) {
            if (g == f) continue;
            folds[f].train.insert(folds[f].train.end(), folds[g].test.begin(), folds[g].test.end());
        }
        std::sort(folds[f].train.begin(), folds[f].train.end());
    }
    return folds;
}

}  // namespace tinyema
