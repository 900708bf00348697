#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tinyema/harness.hpp"

namespace tinyema {

/// Componentwise |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline constexpr double kGradientFloor = 1e-6;

struct GradientReport {
    double max_rel_error = 0.0;
    std::size_t components = 0;
};

/// Central differences of `f` around `x`, compared with `analytic`.
GradientReport compare_gradient(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                                std::span<const double> analytic, double h);

/// A frozen tiny training instance: one image, its targets and context boxes,
/// params with a fitted scaler, and states advanced by one forward pass.
struct TinyInstance {
    TrainConfig config;
    std::vector<PatchGrid> grids;
    std::vector<CellTargets> targets;
    std::vector<TrainingSample> samples;
    ModelParams params;
    ModelStates states;
};

/// 64x64 scene with at most 10 objects. The returned samples point into the
/// instance, so keep it alive (and unmoved) while they are used.
std::unique_ptr<TinyInstance> make_tiny_instance(std::uint64_t seed, ComponentSet components);

/// Worst relative error of total_loss gradients over every parameter block.
GradientReport check_total_loss_gradient(const TinyInstance& instance, double h = 1e-5);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// The invariant suite behind `tinyema selftest`.
std::vector<CheckResult> run_selftest(std::uint64_t seed = 1);

}  // namespace tinyema
