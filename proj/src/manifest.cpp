#include "tinyema/manifest.hpp"

#include <fstream>
#include "json.hpp"

#include "tinyema/errors.hpp"

namespace tinyema {

using ordered_json = nlohmann::ordered_json;

std::size_t Manifest::object_count() const noexcept {
    std::size_t n = 0;
    for (const auto& r : records) n += r.objects.size();
    return n;
}

std::string manifest_line(const ManifestRecord& record) {
    ordered_json j;
    j["image"] = record.image;
    j["width"] = record.width;
    j["height"] = record.height;
    ordered_json objects = ordered_json::array();
    for (const auto& o : record.objects) {
        objects.push_back({o.cx, o.cy, o.w, o.h});
    }
    j["objects"] = std::move(objects);
    j["tier"] = record.tier;
    j["seed"] = record.seed;
    return j.dump();
}

ManifestRecord parse_manifest_line(const std::string& line) {
    const auto j = ordered_json::parse(line);
    ManifestRecord r;
    r.image = j.at("image").get<std::string>();
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
    for (const auto& o : j.at("objects")) {
        if (!o.is_array() || o.size() != 4) {
            throw ArgumentError("object entries must be [cx, cy, w, h]");
        }
        r.objects.push_back({o[0].get<double>(), o[1].get<double>(), o[2].get<double>(), o[3].get<double>()});
    }
    r.tier = j.value("tier", std::string{});
    r.seed = j.value("seed", std::uint64_t{0});
    return r;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    for (const auto& record : manifest.records) {
        out << manifest_line(record) << '\n';
    }
    if (!out) throw IoError(path.string(), "write failed");
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open manifest");
    Manifest m;
    m.directory = path.parent_path();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            m.records.push_back(parse_manifest_line(line));
        } catch (const std::exception& e) {
            throw IoError(path.string(), "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return m;
}

}  // namespace tinyema
