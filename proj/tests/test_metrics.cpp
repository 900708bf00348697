#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "tinyema/errors.hpp"
#include "tinyema/metrics.hpp"
#include "tinyema/random.hpp"

using namespace tinyema;

namespace {

Detection det(double x, double y, double conf) { return {{x, y}, {x - 3, y - 3, 6, 6}, conf}; }

// Matches the predictions at or above `cut` from scratch and returns the
// true-positive count.
int tp_at_cut(const std::vector<Detection>& preds, const std::vector<Point2>& gts, double tol, double cut) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i].confidence >= cut) keep.push_back(i);
    std::sort(keep.begin(), keep.end(), [&](auto a, auto b) { return preds[a].confidence > preds[b].confidence; });
    std::vector<bool> used(gts.size(), false);
    int tp = 0;
    for (std::size_t i : keep) {
        int best = -1;
        double bd = 1e300;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double d = std::hypot(preds[i].center.x - gts[g].x, preds[i].center.y - gts[g].y);
            if (!used[g] && d <= tol && d < bd) {
                bd = d;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            used[static_cast<std::size_t>(best)] = true;
            ++tp;
        }
    }
    return tp;
}

// Precision and recall at every confidence cut; AP sums recall steps times
// the best precision achieved at that recall or beyond.
double exhaustive_ap(const std::vector<Detection>& preds, const std::vector<Point2>& gts, double tol) {
    std::vector<double> cuts;
    for (const auto& p : preds) cuts.push_back(p.confidence);
    std::sort(cuts.rbegin(), cuts.rend());
    std::vector<std::pair<double, double>> pr;  // recall, precision
    for (double c : cuts) {
        int kept = 0;
        for (const auto& p : preds) kept += p.confidence >= c;
        const int tp = tp_at_cut(preds, gts, tol, c);
        pr.push_back({double(tp) / gts.size(), double(tp) / kept});
    }
    double ap = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < pr.size(); ++i) {
        if (pr[i].first <= prev) continue;
        double best = 0.0;
        for (std::size_t j = i; j < pr.size(); ++j) best = std::max(best, pr[j].second);
        ap += (pr[i].first - prev) * best;
        prev = pr[i].first;
    }
    return ap;
}

}  // namespace

TEST(MatchDetections, Examples) {
    const std::vector<Point2> gt{{5, 6}};
    const auto m = match_detections(std::vector{det(5, 5, 0.9)}, gt, 2.0);
    EXPECT_EQ(m.true_positives, 1);
    EXPECT_EQ(m.false_positives, 0);
    EXPECT_EQ(m.false_negatives, 0);

    const auto two = match_detections(std::vector{det(5, 5, 0.9), det(5, 7, 0.8)}, gt, 2.0);
    EXPECT_EQ(two.true_positives, 1);
    EXPECT_EQ(two.false_positives, 1);
    ASSERT_EQ(two.pairs.size(), 1u);
    EXPECT_EQ(two.pairs[0].pred, 0u);

    const std::vector<Point2> three{{1, 1}, {9, 9}, {20, 20}};
    EXPECT_EQ(match_detections(std::vector<Detection>{}, three, 2.0).false_negatives, 3);
    EXPECT_THROW(match_detections(std::vector<Detection>{}, three, 0.0), ArgumentError);
}

TEST(MatchDetections, CountsAreConsistent) {
    Rng rng(31);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<Detection> preds;
        std::vector<Point2> gts;
        for (int i = 0, n = int(rng.below(8)); i < n; ++i) preds.push_back(det(rng.uniform(0, 30), rng.uniform(0, 30), rng.uniform()));
        for (int i = 0, n = int(rng.below(8)); i < n; ++i) gts.push_back({rng.uniform(0, 30), rng.uniform(0, 30)});
        const auto m = match_detections(preds, gts, 4.0);
        EXPECT_EQ(m.true_positives + m.false_positives, int(preds.size()));
        EXPECT_EQ(m.true_positives + m.false_negatives, int(gts.size()));
        std::set<std::size_t> used;
        for (const auto& p : m.pairs) {
            EXPECT_TRUE(used.insert(p.gt).second);
            EXPECT_LE(p.distance, 4.0);
        }
    }
}

TEST(AveragePrecision, Examples) {
    const std::vector<Point2> gt{{10, 10}};
    EXPECT_DOUBLE_EQ(average_precision(std::vector{det(10, 10, 0.7)}, gt, 3.0), 1.0);
    EXPECT_NEAR(average_precision(std::vector{det(40, 40, 0.9), det(10, 10, 0.8)}, gt, 3.0), 0.5, 1e-9);
    EXPECT_EQ(average_precision(std::vector<Detection>{}, gt, 3.0), 0.0);
    EXPECT_THROW(average_precision(std::vector{det(1, 1, 0.5)}, std::vector<Point2>{}, 3.0), ArgumentError);
}

TEST(AveragePrecision, MatchesExhaustiveOracle) {
    Rng rng(404);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<Detection> preds;
        std::vector<Point2> gts;
        const int ng = 1 + int(rng.below(5));
        for (int i = 0; i < ng; ++i) gts.push_back({rng.uniform(0, 20), rng.uniform(0, 20)});
        const int np = int(rng.below(7));
        for (int i = 0; i < np; ++i) {
            // Half the predictions land near a ground truth.
            Point2 c{rng.uniform(0, 20), rng.uniform(0, 20)};
            if (rng.uniform() < 0.5) {
                const auto& g = gts[rng.below(gts.size())];
                c = {g.x + rng.uniform(-3, 3), g.y + rng.uniform(-3, 3)};
            }
            preds.push_back(det(c.x, c.y, rng.uniform()));
        }
        const double ap = average_precision(preds, gts, 3.0);
        worst = std::max(worst, std::abs(ap - exhaustive_ap(preds, gts, 3.0)));
        EXPECT_GE(ap, 0.0);
        EXPECT_LE(ap, 1.0);
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(PrCurve, PooledRecallIsMonotone) {
    Rng rng(6);
    std::vector<ImageEval> images(3);
    for (auto& im : images) {
        for (int i = 0; i < 5; ++i) im.gts.push_back({rng.uniform(0, 50), rng.uniform(0, 50)});
        for (int i = 0; i < 8; ++i) im.preds.push_back(det(rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform()));
    }
    const auto curve = pr_curve(images, 5.0);
    ASSERT_EQ(curve.size(), 24u);
    for (std::size_t i = 1; i < curve.size(); ++i) {
        EXPECT_GE(curve[i].recall, curve[i - 1].recall);
        EXPECT_LE(curve[i].confidence, curve[i - 1].confidence);
    }
}

TEST(Prf1, Examples) {
    const auto eq = prf1(3, 1, 1);
    EXPECT_DOUBLE_EQ(eq.f1, eq.precision);
    const auto r = prf1(3, 2, 1);
    EXPECT_NEAR(r.precision, 0.6, 1e-12);
    EXPECT_NEAR(r.recall, 0.75, 1e-12);
    EXPECT_NEAR(r.f1, 0.666667, 1e-6);
    const auto z = prf1(0, 0, 0);
    EXPECT_EQ(z.precision, 0.0);
    EXPECT_EQ(z.recall, 0.0);
    EXPECT_EQ(z.f1, 0.0);
}

TEST(KFold, Examples) {
    const auto folds = kfold_split(10, 5, 3);
    ASSERT_EQ(folds.size(), 5u);
    std::set<std::size_t> all;
    for (const auto& f : folds) {
        EXPECT_EQ(f.test.size(), 2u);
        EXPECT_EQ(f.train.size(), 8u);
        for (auto i : f.test) EXPECT_TRUE(all.insert(i).second);
        for (auto i : f.train) EXPECT_EQ(std::count(f.test.begin(), f.test.end(), i), 0);
    }
    EXPECT_EQ(all.size(), 10u);
    const auto again = kfold_split(10, 5, 3);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(folds[i].test, again[i].test);
    EXPECT_THROW(kfold_split(3, 4, 1), ArgumentError);
    EXPECT_THROW(kfold_split(3, 1, 1), ArgumentError);
}

TEST(KFold, UnevenSizesDifferByAtMostOne) {
    for (std::size_t n = 3; n < 40; ++n) {
        for (int k = 2; k <= 3; ++k) {
            const auto folds = kfold_split(n, k, n);
            std::size_t lo = n, hi = 0;
            for (const auto& f : folds) {
                lo = std::min(lo, f.test.size());
                hi = std::max(hi, f.test.size());
            }
            EXPECT_LE(hi - lo, 1u);
        }
    }
}
