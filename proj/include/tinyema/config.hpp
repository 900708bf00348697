#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "tinyema/harness.hpp"
#include "tinyema/metrics.hpp"
#include "tinyema/scenegen.hpp"

namespace tinyema {

/// Everything a run needs: dataset recipe, training and evaluation settings.
/// On disk this is one JSON document with optional "dataset", "train" and
/// "eval" sections; omitted keys keep their defaults and unknown keys are
/// rejected.
struct ProjectConfig {
    DatasetConfig dataset;
    TrainConfig train;
    EvalSettings eval;
};

/// Throws ConfigError naming the offending field. With `unsafe_ranges` the
/// hyperparameter working intervals are not enforced; structural checks
/// (types, positivity) always are.
ProjectConfig parse_config(const nlohmann::json& doc, bool unsafe_ranges = false);
ProjectConfig load_config(const std::filesystem::path& path, bool unsafe_ranges = false);

/// Working intervals: rho in [0.01, 0.1], delta in [20, 100], gamma in
/// [0.1, 0.5], lambda in [0.5, 2.0], lambda1..3 in [0.1, 1.0], k1, k2 in
/// [0.5, 1.5], k3 in [0.01, 0.1].
void validate_ranges(const TrainConfig& config);

nlohmann::ordered_json to_json(const DatasetConfig& config);
nlohmann::ordered_json to_json(const TrainConfig& config);
nlohmann::ordered_json to_json(const EvalSettings& settings);
nlohmann::ordered_json to_json(const ProjectConfig& config);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
/// Hex digest of the canonical JSON of `config`.
std::string config_fingerprint(const TrainConfig& config);

}  // namespace tinyema
