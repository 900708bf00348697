#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tinyema/context.hpp"

namespace tinyema {

/// One annotated object, stored center-based: (cx, cy, w, h) in pixels with
/// the origin at the top-left corner.
struct ObjectRecord {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    BBox box() const noexcept { return {cx - 0.5 * w, cy - 0.5 * h, w, h}; }
    bool operator==(const ObjectRecord&) const = default;
};

struct ManifestRecord {
    std::string image;  // path relative to the manifest's directory
    int width = 0;
    int height = 0;
    std::vector<ObjectRecord> objects;
    std::string tier;
    std::uint64_t seed = 0;

    bool operator==(const ManifestRecord&) const = default;
};

/// JSON Lines: one record per line with keys in the order
/// image, width, height, objects, tier, seed.
struct Manifest {
    std::filesystem::path directory;  // images resolve against this
    std::vector<ManifestRecord> records;

    std::filesystem::path image_path(std::size_t i) const { return directory / records.at(i).image; }
    std::size_t size() const noexcept { return records.size(); }
    std::size_t object_count() const noexcept;
};

std::string manifest_line(const ManifestRecord& record);
ManifestRecord parse_manifest_line(const std::string& line);

void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace tinyema
