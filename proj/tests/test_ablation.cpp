#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "tinyema/ablation.hpp"
#include "tinyema/config.hpp"
#include "tinyema/errors.hpp"

using namespace tinyema;

namespace {

Dataset small_data() {
    DatasetConfig c;
    c.n_images = 6;
    c.width = 64;
    c.height = 64;
    c.mean_objects = 6;
    auto mem = render_dataset(c);
    Dataset d = Dataset::from_memory(mem.manifest, mem.images);
    d.cache_grids(8);
    return d;
}

TrainConfig quick() {
    TrainConfig c;
    c.epochs = 1;
    c.embedding_dim = 4;
    return c;
}

}  // namespace

TEST(MeanStd, SampleStandardDeviation) {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const auto m = mean_std(v);
    EXPECT_DOUBLE_EQ(m.mean, 2.5);
    EXPECT_NEAR(m.std, std::sqrt(5.0 / 3.0), 1e-12);
    EXPECT_EQ(mean_std(std::vector<double>{0.7}).std, 0.0);
}

TEST(ComponentGrid, EightSubsetsInTableOrder) {
    const auto g = component_grid();
    ASSERT_EQ(g.size(), 8u);
    const std::vector<std::string> labels{"Baseline", "+AA", "+ES", "+CR", "+AA+ES", "+AA+CR", "+ES+CR", "+All"};
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(g[i].label(), labels[i]);
}

TEST(Ablation, BaselineOnlyGridGivesOneRow) {
    const auto data = small_data();
    const std::vector<ComponentSet> grid{ComponentSet{}};
    EvalSettings ev;
    const auto t = ablation_run(data, quick(), grid, 2, 1, ev, 1);
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.rows[0].label, "Baseline");
    EXPECT_EQ(t.rows[0].folds.size(), 2u);
    EXPECT_FALSE(t.rows[0].error.has_value());
}

TEST(Ablation, FullGridShapeAndDeterminism) {
    const auto data = small_data();
    const auto grid = component_grid();
    EvalSettings ev;
    const auto a = ablation_run(data, quick(), grid, 3, 4, ev, 2);
    ASSERT_EQ(a.rows.size(), 8u);
    for (const auto& r : a.rows) {
        EXPECT_EQ(r.folds.size(), 3u);
        for (const auto& f : r.folds) {
            EXPECT_GE(f.map, 0.0);
            EXPECT_LE(f.map, 1.0);
        }
    }
    const auto b = ablation_run(data, quick(), grid, 3, 4, ev, 1);
    EXPECT_EQ(metrics_csv(a), metrics_csv(b));
    EXPECT_EQ(render_table(a), render_table(b));
}

TEST(Ablation, FailingRowsAreReportedInsteadOfThrown) {
    const auto data = small_data();
    TrainConfig bad = quick();
    bad.delta = -1.0;
    const std::vector<ComponentSet> grid{ComponentSet{}, ComponentSet{false, true, false}};
    EvalSettings ev;
    const auto t = ablation_run(data, bad, grid, 2, 1, ev, 1);
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_TRUE(t.rows[0].error.has_value());
    EXPECT_TRUE(t.rows[1].error.has_value());
    const auto csv = metrics_csv(t);
    EXPECT_NE(csv.find("Baseline,error,"), std::string::npos);
    EXPECT_NE(csv.find("+ES,error,"), std::string::npos);
}

TEST(MetricsCsv, AggregateRowsRoundTrip) {
    AblationTable t;
    t.k = 2;
    MetricsReport r;
    r.label = "+AA";
    r.components.aa = true;
    r.fingerprint = "abc";
    r.folds = {{0.61, 0.5, 0.4, 0.44}, {0.63, 0.52, 0.42, 0.46}};
    summarize(r);
    t.rows.push_back(r);
    const auto csv = metrics_csv(t);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "config,fold,mAP,precision,recall,f1,fingerprint");
    EXPECT_NE(csv.find("+AA,1,0.610000,"), std::string::npos);
    EXPECT_NE(csv.find("62.0\xC2\xB1" "1.4"), std::string::npos);
    const auto rows = parse_metrics_csv(csv);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].label, "+AA");
    EXPECT_NEAR(rows[0].map.mean, 62.0, 1e-9);
    EXPECT_NEAR(rows[0].map.std, 1.4, 1e-9);
    EXPECT_NE(render_table(rows).find("+AA"), std::string::npos);
    const auto svg = ablation_svg(rows);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(PrCurvesCsv, RoundTrip) {
    const std::vector<NamedCurve> curves{{"Baseline", {{0.1, 1.0, 0.9}, {0.2, 0.5, 0.4}}}, {"+All", {{0.5, 0.75, 0.3}}}};
    const auto back = parse_pr_curves_csv(pr_curves_csv(curves));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].label, "Baseline");
    ASSERT_EQ(back[0].points.size(), 2u);
    EXPECT_NEAR(back[0].points[1].precision, 0.5, 1e-9);
    EXPECT_NEAR(back[1].points[0].confidence, 0.3, 1e-9);
    EXPECT_NE(pr_curves_svg(back).find("polyline"), std::string::npos);
}
