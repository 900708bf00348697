#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "tinyema/errors.hpp"
#include "tinyema/random.hpp"
#include "tinyema/stats.hpp"

using namespace tinyema;

namespace {

ImageBuffer two_by_two() { return ImageBuffer(2, 2, std::vector<double>{0.0, 0.5, 0.5, 1.0}); }

// Two-pass reference, independent of the library's accumulation order.
ScalarStats direct_stats(const ImageBuffer& img, const Region& r) {
    double sum = 0.0;
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) sum += img.at(x, y);
    const double mean = sum / r.area();
    double sq = 0.0;
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) sq += (img.at(x, y) - mean) * (img.at(x, y) - mean);
    return {mean, std::sqrt(sq / r.area())};
}

}  // namespace

TEST(LocalStats, HandExample) {
    const auto s = local_stats(two_by_two(), Region::full(two_by_two()));
    EXPECT_NEAR(s.mean, 0.5, 1e-9);
    EXPECT_NEAR(s.std, 0.353553390593, 1e-9);
}

TEST(LocalStats, ConstantAndSingleton) {
    const ImageBuffer c(7, 5, 0.3);
    const auto s = local_stats(c, {1, 1, 4, 3});
    EXPECT_DOUBLE_EQ(s.mean, 0.3);
    EXPECT_EQ(s.std, 0.0);
    const ImageBuffer one(1, 1, 0.7);
    const auto t = local_stats(one, Region::full(one));
    EXPECT_DOUBLE_EQ(t.mean, 0.7);
    EXPECT_EQ(t.std, 0.0);
}

TEST(LocalStats, RejectsBadRegions) {
    const ImageBuffer img(4, 4, 0.5);
    EXPECT_THROW(local_stats(img, {0, 0, 0, 4}), BoundsError);
    EXPECT_THROW(local_stats(img, {0, 0, 5, 4}), BoundsError);
    EXPECT_THROW(local_stats(img, {-1, 0, 2, 2}), BoundsError);
}

TEST(LocalStats, MatchesDirectSummationOnRandomRegions) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int w = 1 + static_cast<int>(rng.below(20));
        const int h = 1 + static_cast<int>(rng.below(20));
        ImageBuffer img(w, h);
        for (double& v : img.pixels()) v = rng.uniform();
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
        const int x1 = x0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(w - x0)));
        const int y1 = y0 + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(h - y0)));
        const Region r{x0, y0, x1, y1};
        const auto got = local_stats(img, r);
        const auto want = direct_stats(img, r);
        EXPECT_NEAR(got.mean, want.mean, 1e-12);
        EXPECT_NEAR(got.std, want.std, 1e-12);
        EXPECT_GE(got.std, 0.0);
    }
}

TEST(BatchStats, Examples) {
    const std::vector<ImageBuffer> single{two_by_two()};
    const auto s = batch_stats(single);
    const auto l = local_stats(single[0], Region::full(single[0]));
    EXPECT_EQ(s.mean, l.mean);
    EXPECT_EQ(s.std, l.std);

    const std::vector<ImageBuffer> constants{ImageBuffer(3, 3, 0.2), ImageBuffer(3, 3, 0.6)};
    const auto c = batch_stats(constants);
    EXPECT_NEAR(c.mean, 0.4, 1e-12);
    EXPECT_NEAR(c.std, 0.0, 1e-12);

    const std::vector<ImageBuffer> mixed{two_by_two(), ImageBuffer(2, 2, 0.5)};
    const auto m = batch_stats(mixed);
    EXPECT_NEAR(m.mean, 0.5, 1e-9);
    EXPECT_NEAR(m.std, 0.176776695297, 1e-9);
}

TEST(BatchStats, EmptyBatchThrows) {
    EXPECT_THROW(batch_stats(std::vector<ImageBuffer>{}), ArgumentError);
}

TEST(EmaUpdate, Examples) {
    EXPECT_NEAR(ema_update(0.5, 0.7, 0.1), 0.52, 1e-9);
    EXPECT_EQ(ema_update(0.42, 0.42, 0.07), 0.42);
    EXPECT_EQ(ema_update(0.0, 1.0, 1.0), 1.0);
}

TEST(EmaUpdate, RejectsRhoOutsideUnitInterval) {
    EXPECT_THROW(ema_update(0.0, 1.0, 0.0), ArgumentError);
    EXPECT_THROW(ema_update(0.0, 1.0, 1.5), ArgumentError);
    EXPECT_THROW(check_rho(-0.1), ArgumentError);
    EXPECT_NO_THROW(check_rho(0.05));
}

TEST(EmaUpdate, ConstantObservationFollowsGeometricLaw) {
    for (double rho : {0.01, 0.05, 0.1}) {
        double x = 0.9;
        const double b = 0.2;
        for (int t = 1; t <= 200; ++t) {
            x = ema_update(x, b, rho);
            const double law = b + std::pow(1.0 - rho, t) * (0.9 - b);
            ASSERT_NEAR(x, law, 1e-12 * std::abs(0.9 - b)) << "rho " << rho << " step " << t;
        }
    }
}

TEST(EmaUpdate, StaysBetweenPreviousAndObserved) {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double p = rng.uniform(), o = rng.uniform(), rho = rng.uniform(0.01, 1.0);
        const double v = ema_update(p, o, rho);
        EXPECT_GE(v, std::min(p, o) - 1e-15);
        EXPECT_LE(v, std::max(p, o) + 1e-15);
    }
}

TEST(EmaScalarPair, FirstObservationSeeds) {
    EmaScalarPair pair(0.1);
    EXPECT_FALSE(pair.initialized);
    pair.observe({0.3, 0.1});
    EXPECT_TRUE(pair.initialized);
    EXPECT_EQ(pair.mu_ref, 0.3);
    EXPECT_EQ(pair.sigma_ref, 0.1);
    pair.observe({0.7, 0.2});
    EXPECT_NEAR(pair.mu_ref, 0.34, 1e-12);
    EXPECT_NEAR(pair.sigma_ref, 0.11, 1e-12);
}
