#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tinyema/harness.hpp"
#include "tinyema/metrics.hpp"

namespace tinyema {

struct FoldMetrics {
    double map = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation across folds; 0 for one fold
};

MeanStd mean_std(std::span<const double> values);

/// One row of the component table.
struct MetricsReport {
    std::string label;
    ComponentSet components;
    std::string fingerprint;
    std::vector<FoldMetrics> folds;
    MeanStd map;
    MeanStd precision;
    MeanStd recall;
    MeanStd f1;
    std::vector<PrPoint> pr;            // pooled over every fold's test images
    std::optional<std::string> error;   // set when a fold failed; metrics are then empty
};

/// Scores `detector` on `ids`: AP over all ranked detections, and
/// precision/recall/F1 at the operating threshold. The per-image
/// evaluations are appended to `evals` when non-null.
FoldMetrics evaluate(const Detector& detector, const Dataset& data, std::span<const std::size_t> ids,
                     const EvalSettings& settings, std::vector<ImageEval>* evals = nullptr);

/// Aggregates per-fold metrics into mean and std.
void summarize(MetricsReport& report);

/// Baseline, +AA, +ES, +CR, +AA+ES, +AA+CR, +ES+CR, +All.
std::vector<ComponentSet> component_grid();

struct AblationTable {
    int k = 0;
    std::uint64_t seed = 0;
    std::vector<MetricsReport> rows;
};

/// k-fold train/evaluate for every component subset. Rows come back in grid
/// order regardless of scheduling; a failing fold marks its row with an error
/// and the other rows continue. `threads` = 0 uses the hardware concurrency.
AblationTable ablation_run(const Dataset& data, const TrainConfig& base, std::span<const ComponentSet> grid, int k,
                           std::uint64_t seed, const EvalSettings& settings, unsigned threads = 0);

/// Header row, one row per (config, fold), then one aggregate row per config
/// with "mean±std" cells in percent to one decimal.
std::string metrics_csv(const AblationTable& table);

/// Fixed-width text rendering in the same row order.
std::string render_table(const AblationTable& table);

struct CsvAggregate {
    std::string label;
    MeanStd map;
    MeanStd precision;
    MeanStd recall;
    MeanStd f1;
};

/// Reads the aggregate rows back from metrics_csv output.
std::vector<CsvAggregate> parse_metrics_csv(const std::string& csv);

std::string render_table(std::span<const CsvAggregate> rows);

/// Grouped bar chart of mean mAP/P/R/F1 (percent) per row, with std whiskers.
std::string ablation_svg(std::span<const CsvAggregate> rows);

struct NamedCurve {
    std::string label;
    std::vector<PrPoint> points;
};

/// Precision-recall curves as polylines on the unit square.
std::string pr_curves_svg(std::span<const NamedCurve> curves);

/// label,recall,precision,confidence rows.
std::string pr_curves_csv(std::span<const NamedCurve> curves);
std::vector<NamedCurve> parse_pr_curves_csv(const std::string& csv);

}  // namespace tinyema
