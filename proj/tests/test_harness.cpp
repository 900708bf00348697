#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "tinyema/errors.hpp"
#include "tinyema/harness.hpp"
#include "tinyema/random.hpp"
#include "tinyema/scenegen.hpp"
#include "tinyema/selftest.hpp"

using namespace tinyema;

namespace {

// Mean-intensity detector: embedding 0 is the standardized patch mean and the
// objectness head fires on bright cells.
ModelParams mean_detector(double weight, double bias) {
    ModelParams m = ModelParams::zeros(kDescriptorSize, 2, 8);
    m.proj[0] = 1.0;
    m.obj_w[0] = weight;
    m.obj_b[0] = bias;
    return m;
}

ImageBuffer with_patch(int x0, int y0, int w, int h, double v) {
    ImageBuffer img(64, 64, 0.0);
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) img.at(x, y) = v;
    return img;
}

double bce(double z, double y) { return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - y * z; }

Dataset tiny_dataset(int n, std::uint64_t seed) {
    DatasetConfig c;
    c.n_images = n;
    c.width = 64;
    c.height = 64;
    c.mean_objects = 6;
    c.seed = seed;
    auto mem = render_dataset(c);
    Dataset d = Dataset::from_memory(mem.manifest, mem.images);
    d.cache_grids(8);
    return d;
}

TrainConfig quick_config() {
    TrainConfig c;
    c.epochs = 2;
    c.embedding_dim = 4;
    return c;
}

}  // namespace

TEST(Descriptors, ConstantImageGivesEqualEmbeddings) {
    const ImageBuffer img(40, 32, 0.3);
    const auto grid = compute_descriptors(img, 8);
    const auto params = ModelParams::initialize(kDescriptorSize, 5, 20, 3, 1.0, 0.1);
    const auto f = embed(grid, params);
    for (const auto& e : f.embeddings)
        for (std::size_t k = 0; k < e.vector.size(); ++k) EXPECT_NEAR(e.vector[k], f.embeddings[0].vector[k], 1e-12);
    for (std::size_t i = 0; i < grid.cell_count(); ++i) {
        const auto d = grid.cell(i);
        EXPECT_NEAR(d[0], 0.3, 1e-12);
        EXPECT_NEAR(d[1], 0.0, 1e-12);
        EXPECT_NEAR(d[4], 0.0, 1e-12);
    }
}

TEST(Descriptors, TilingOfFullFrame) {
    const ImageBuffer img(512, 512, 0.5);
    const auto grid = compute_descriptors(img, 8);
    EXPECT_EQ(grid.rows, 64);
    EXPECT_EQ(grid.cols, 64);
    EXPECT_EQ(grid.cell_count(), 4096u);
    for (std::size_t i = 0; i < grid.cell_count(); i += 97) {
        const auto c = grid.cell_center(i);
        EXPECT_EQ(c.x, 4 + 8 * double(i % 64));
        EXPECT_EQ(c.y, 4 + 8 * double(i / 64));
    }
    EXPECT_THROW(compute_descriptors(ImageBuffer(6, 6, 0.0), 8), ArgumentError);
}

TEST(Descriptors, MeanProjectionRecoversPatchMean) {
    Rng rng(3);
    ImageBuffer img(32, 24);
    for (double& v : img.pixels()) v = rng.uniform();
    const auto f = extract_features(img, mean_detector(1.0, 0.0), 8);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            double sum = 0.0;
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) sum += img.at(c * 8 + x, r * 8 + y);
            EXPECT_NEAR(f.fmap.cell(f.fmap.cell_index(r, c))[0], sum / 64, 1e-12);
        }
    }
}

TEST(Descriptors, ClipBoundsStandardizedInputs) {
    const auto grid = compute_descriptors(with_patch(0, 0, 8, 8, 1.0), 8);
    ModelParams m = mean_detector(1.0, 0.0);
    m.desc_scale[0] = 100.0;
    m.desc_clip = 2.0;
    const auto f = embed(grid, m);
    EXPECT_NEAR(f.fmap.cell(0)[0], 2.0 * std::tanh(50.0), 1e-12);
    EXPECT_LE(f.fmap.cell(0)[0], 2.0);
    EXPECT_LT(embed(compute_descriptors(with_patch(0, 0, 8, 8, 0.01), 8), m).fmap.cell(0)[0], 2.0);
}

TEST(Predict, Examples) {
    const auto params = mean_detector(20.0, -10.0);
    const PredictOptions opt;
    EXPECT_TRUE(predict(ImageBuffer(64, 64, 0.0), params, nullptr, opt).empty());

    ModelParams shifted = params;
    shifted.offset_b = {0.25, -0.125};
    const auto one = predict(with_patch(16, 16, 8, 8, 1.0), shifted, nullptr, opt);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_DOUBLE_EQ(one[0].center.x, 22.0);
    EXPECT_DOUBLE_EQ(one[0].center.y, 19.0);
    EXPECT_DOUBLE_EQ(one[0].box.w, 2 * opt.box_radius);

    ImageBuffer two = with_patch(16, 16, 8, 8, 0.9);
    for (int y = 16; y < 24; ++y)
        for (int x = 24; x < 32; ++x) two.at(x, y) = 1.0;
    PredictOptions wide = opt;
    wide.nms_radius = 10.0;
    const auto kept = predict(two, params, nullptr, wide);
    ASSERT_EQ(kept.size(), 1u);
    EXPECT_DOUBLE_EQ(kept[0].center.x, 28.0);
    EXPECT_EQ(predict(two, params, nullptr, opt).size(), 2u);
}

TEST(Predict, KeptDetectionsAreSeparatedAndSorted) {
    Rng rng(8);
    ImageBuffer img(64, 64);
    for (double& v : img.pixels()) v = rng.uniform();
    PredictOptions opt;
    opt.threshold = 0.0;
    opt.nms_radius = 9.0;
    const auto dets = predict(img, mean_detector(5.0, -2.0), nullptr, opt);
    for (std::size_t a = 0; a < dets.size(); ++a) {
        if (a > 0) EXPECT_LE(dets[a].confidence, dets[a - 1].confidence);
        for (std::size_t b = a + 1; b < dets.size(); ++b) {
            EXPECT_GT(std::hypot(dets[a].center.x - dets[b].center.x, dets[a].center.y - dets[b].center.y), 9.0);
        }
    }
}

TEST(Targets, PositiveCellContainsCenter) {
    const auto grid = compute_descriptors(ImageBuffer(32, 32, 0.5), 8);
    const std::vector<ObjectRecord> objs{{13.0, 5.0, 6, 6}, {30.0, 30.0, 6, 6}, {100.0, 5.0, 6, 6}};
    const auto t = make_targets(grid, objs);
    EXPECT_EQ(t.positive_cells, (std::vector<std::size_t>{1, 15}));
    EXPECT_DOUBLE_EQ(t.offset[1][0], (13.0 - 12.0) / 8);
    EXPECT_DOUBLE_EQ(t.offset[1][1], (5.0 - 4.0) / 8);
}

TEST(TotalLoss, ZeroWeightsLeaveSupervisedTermsOnly) {
    auto inst = make_tiny_instance(5, {true, true, true});
    TrainConfig c = inst->config;
    c.lambda1 = c.lambda2 = c.lambda3 = 0.0;
    const auto r = total_loss(inst->params, inst->samples, inst->states, c);
    EXPECT_EQ(r.breakdown.total, r.breakdown.cls + r.breakdown.bbox + r.breakdown.obj);
    EXPECT_EQ(r.breakdown.cls, 0.0);
}

TEST(TotalLoss, PerfectPredictionsReachBceFloor) {
    const auto grid = compute_descriptors(with_patch(8, 8, 8, 8, 1.0), 8);
    const std::vector<ObjectRecord> objs{{12.0, 12.0, 6, 6}};
    const auto targets = make_targets(grid, objs);
    std::vector<TrainingSample> samples{{&grid, &targets, {}}};
    TrainConfig c;
    c.embedding_dim = 2;
    c.pool_grid = 2;
    const auto states = ModelStates::fresh(c);
    const auto r = total_loss(mean_detector(60.0, -30.0), samples, states, c);
    EXPECT_LT(r.breakdown.total, 1e-12);
    EXPECT_EQ(r.breakdown.bbox, 0.0);
}

TEST(TotalLoss, EqualsIndependentlySummedTerms) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto inst = make_tiny_instance(seed, {false, true, true});
        const auto& c = inst->config;
        const auto fwd = forward(inst->params, inst->samples, c);
        const auto r = total_loss(inst->params, fwd, inst->samples, inst->states, c);

        const auto& p = inst->params;
        const auto d = static_cast<std::size_t>(p.embedding_dim);
        double bias = p.merged_b[0];
        for (std::size_t k = 0; k < inst->states.context.ref.size(); ++k) bias += p.merged_w[d + k] * inst->states.context.ref[k];
        const auto& feat = fwd.features[0];
        const auto& tgt = *inst->samples[0].targets;
        double obj = 0.0, bbox = 0.0;
        for (std::size_t i = 0; i < feat.embeddings.size(); ++i) {
            double z = bias;
            for (std::size_t k = 0; k < d; ++k) z += p.merged_w[k] * feat.embeddings[i].vector[k];
            obj += bce(z, tgt.positive[i]) / feat.embeddings.size();
        }
        for (std::size_t i : tgt.positive_cells) {
            for (std::size_t a = 0; a < 2; ++a) {
                double o = p.offset_b[a];
                for (std::size_t k = 0; k < d; ++k) o += p.offset_w[a * d + k] * feat.embeddings[i].vector[k];
                bbox += (o - tgt.offset[i][a]) * (o - tgt.offset[i][a]) / tgt.positive_cells.size();
            }
        }
        const double cl = cluster_loss(fwd.stabilizer.groups, fwd.stabilizer.embeddings, inst->states.stabilizer).value;
        const double st = stack_loss(fwd.stabilizer.groups, fwd.stabilizer.embeddings, inst->states.stabilizer).value;
        const double cx = context_loss(fwd.context.embeddings, inst->states.context).value;
        const double want = obj + bbox + c.lambda1 * cl + c.lambda2 * st + c.lambda3 * cx;
        EXPECT_NEAR(r.breakdown.obj, obj, 1e-12);
        EXPECT_NEAR(r.breakdown.bbox, bbox, 1e-12);
        EXPECT_NEAR(r.breakdown.total, want, 1e-12);
    }
}

TEST(TotalLoss, GradientMatchesCentralDifferences) {
    const std::vector<ComponentSet> sets{{false, false, false}, {false, true, false}, {false, false, true},
                                         {false, true, true}};
    for (std::uint64_t seed = 20; seed < 32; ++seed) {
        auto inst = make_tiny_instance(seed, sets[seed % sets.size()]);
        const auto fwd_grad = total_loss(inst->params, inst->samples, inst->states, inst->config).grad;
        ModelParams probe = inst->params;
        auto blocks = probe.blocks();
        const auto grads = fwd_grad.blocks();
        Rng rng(seed);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            auto& v = *blocks[b];
            for (int t = 0; t < 6 && !v.empty(); ++t) {
                const std::size_t i = rng.below(v.size());
                const double x0 = v[i];
                const double h = 1e-5;
                v[i] = x0 + h;
                const double up = total_loss(probe, inst->samples, inst->states, inst->config).breakdown.total;
                v[i] = x0 - h;
                const double down = total_loss(probe, inst->samples, inst->states, inst->config).breakdown.total;
                v[i] = x0;
                const double num = (up - down) / (2 * h);
                const double a = (*grads[b])[i];
                EXPECT_LT(std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}), 1e-4)
                    << ModelParams::kBlockNames[b] << "[" << i << "] seed " << seed;
            }
        }
    }
}

TEST(Train, SecondPassOverOneImageDoesNotIncreaseLoss) {
    const auto data = tiny_dataset(1, 4);
    TrainConfig c = quick_config();
    c.learning_rate = 0.005;
    const std::vector<std::size_t> ids{0};
    const auto r = train(data, ids, c);
    ASSERT_EQ(r.epochs.size(), 2u);
    EXPECT_LE(r.epochs[1].loss.total, r.epochs[0].loss.total);
}

TEST(Train, DeterministicInConfigAndSeed) {
    const auto data = tiny_dataset(4, 2);
    TrainConfig c = quick_config();
    c.components = {true, true, true};
    const std::vector<std::size_t> ids{0, 1, 2, 3};
    const auto a = train(data, ids, c);
    const auto b = train(data, ids, c);
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.states, b.states);
    c.seed = 2;
    EXPECT_NE(train(data, ids, c).params, a.params);
}

TEST(Train, EnablingEsAddsWeightedConsistencyAtFirstIteration) {
    const auto data = tiny_dataset(2, 6);
    TrainConfig off = quick_config();
    off.epochs = 1;
    TrainConfig on = off;
    on.components.es = true;
    on.lambda1 = 0.3;
    on.lambda2 = 0.7;
    const std::vector<std::size_t> ids{0, 1};
    const auto a = train(data, ids, off).iterations.at(0);
    const auto b = train(data, ids, on).iterations.at(0);
    EXPECT_EQ(a.obj, b.obj);
    EXPECT_EQ(a.bbox, b.bbox);
    EXPECT_NEAR(b.total - a.total, 0.3 * b.cluster + 0.7 * b.stack, 1e-12);
}

TEST(Train, RejectsBadRequests) {
    const auto data = tiny_dataset(2, 1);
    const std::vector<std::size_t> bad{5};
    EXPECT_THROW(train(data, bad, quick_config()), ArgumentError);
}

TEST(DetectorTest, NormalizationOnlyWithAugmentation) {
    const auto data = tiny_dataset(4, 3);
    TrainConfig c = quick_config();
    c.epochs = 1;
    const std::vector<std::size_t> ids{0, 1, 2, 3};
    const auto plain = train(data, ids, c);
    const Detector d0{c, plain.params, plain.states};
    EXPECT_EQ(d0.normalize(data.images[0]), data.images[0]);

    c.components.aa = true;
    const auto aug = train(data, ids, c);
    const Detector d1{c, aug.params, aug.states};
    EXPECT_TRUE(aug.states.aug.initialized);
    EXPECT_NE(d1.normalize(data.images[0]), data.images[0]);
    EXPECT_EQ(d1.normalize(data.images[0]), d1.normalize(data.images[0]));
    const auto a = d1.detect(data, 0, PredictOptions{});
    const auto b = d1.detect(data.images[0], PredictOptions{});
    ASSERT_EQ(a.size(), b.size());
}
