#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "json.hpp"
#include "tinyema/harness.hpp"

namespace tinyema {

inline constexpr int kSnapshotVersion = 1;

/// A trained model on disk: config, learned weights and every EMA state,
/// plus the config fingerprint so a mismatched load is caught.
struct Snapshot {
    TrainConfig config;
    ModelParams params;
    ModelStates states;
};

nlohmann::ordered_json snapshot_json(const Snapshot& snapshot);
/// Throws ArgumentError on a malformed document, a version it
/// does not understand or a fingerprint that disagrees with the config.
Snapshot parse_snapshot(const nlohmann::json& doc);

void write_snapshot(const std::filesystem::path& path, const Snapshot& snapshot);
Snapshot read_snapshot(const std::filesystem::path& path);

/// One JSON object per epoch.
std::string training_log_jsonl(std::span<const EpochLog> epochs);

}  // namespace tinyema
