#include "tinyema/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "tinyema/errors.hpp"

namespace tinyema {
namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Reads keys from one JSON object, remembering which were consumed so that
// leftovers can be reported as unknown fields.
class Section {
public:
    Section(const json& doc, std::string path) : path_(std::move(path)) {
        if (!doc.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
        doc_ = &doc;
    }

    std::string field(std::string_view key) const {
        return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
    }

    template <typename T>
    void read(std::string_view key, T& out) {
        seen_.insert(std::string(key));
        const auto it = doc_->find(std::string(key));
        if (it == doc_->end()) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw ConfigError(field(key), "expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!it->is_number_integer()) throw ConfigError(field(key), "expected an integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!it->is_number()) throw ConfigError(field(key), "expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!it->is_string()) throw ConfigError(field(key), "expected a string");
            }
            out = it->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(field(key), e.what());
        }
    }

    const json* child(std::string_view key) {
        seen_.insert(std::string(key));
        const auto it = doc_->find(std::string(key));
        return it == doc_->end() ? nullptr : &*it;
    }

    void reject_unknown() const {
        for (const auto& [k, v] : doc_->items()) {
            if (!seen_.contains(k)) throw ConfigError(field(k), "unknown field");
        }
    }

private:
    const json* doc_ = nullptr;
    std::string path_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ConfigError(field, what);
}

void require_range(double v, double lo, double hi, const std::string& field) {
    if (!(v >= lo && v <= hi)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "value %g outside working interval [%g, %g] (use --unsafe-ranges to override)", v,
                      lo, hi);
        throw ConfigError(field, buf);
    }
}

void parse_dataset(const json& doc, DatasetConfig& c) {
    Section s(doc, "dataset");
    s.read("n_images", c.n_images);
    s.read("width", c.width);
    s.read("height", c.height);
    s.read("mean_objects", c.mean_objects);
    s.read("object_jitter", c.object_jitter);
    s.read("object_radius", c.object_radius);
    s.read("radius_jitter", c.radius_jitter);
    s.read("min_separation", c.min_separation);
    s.read("bit_depth", c.bit_depth);
    s.read("png", c.png);
    s.read("seed", c.seed);
    if (const json* tiers = s.child("tiers")) {
        require(tiers->is_array() && !tiers->empty(), "dataset.tiers", "expected a non-empty array of tier names");
        c.tiers.clear();
        for (const auto& t : *tiers) {
            require(t.is_string(), "dataset.tiers", "tier names must be strings");
            const auto name = t.get<std::string>();
            const auto& known = default_tiers();
            require(std::find(known.begin(), known.end(), name) != known.end(), "dataset.tiers",
                    "unknown tier '" + name + "'");
            c.tiers.push_back(name);
        }
    }
    s.reject_unknown();
    require(c.n_images >= 0, "dataset.n_images", "must be non-negative");
    require(c.width >= 1 && c.height >= 1, "dataset.width", "image extents must be positive");
    require(c.mean_objects >= 0.0, "dataset.mean_objects", "must be non-negative");
    require(c.object_jitter >= 0.0 && c.object_jitter < 1.0, "dataset.object_jitter", "must lie in [0, 1)");
    require(c.object_radius > 0.0, "dataset.object_radius", "must be positive");
    require(c.radius_jitter >= 0.0 && c.radius_jitter < c.object_radius, "dataset.radius_jitter",
            "must lie in [0, object_radius)");
    require(c.min_separation >= 0.0, "dataset.min_separation", "must be non-negative");
    require(c.bit_depth == 8 || c.bit_depth == 16, "dataset.bit_depth", "must be 8 or 16");
}

void parse_train(const json& doc, TrainConfig& c) {
    Section s(doc, "train");
    s.read("epochs", c.epochs);
    s.read("batch_size", c.batch_size);
    s.read("learning_rate", c.learning_rate);
    s.read("lambda1", c.lambda1);
    s.read("lambda2", c.lambda2);
    s.read("lambda3", c.lambda3);
    if (const json* comp = s.child("components")) {
        Section cs(*comp, "train.components");
        cs.read("aa", c.components.aa);
        cs.read("es", c.components.es);
        cs.read("cr", c.components.cr);
        cs.reject_unknown();
    }
    s.read("rho", c.rho);
    s.read("delta", c.delta);
    s.read("gamma", c.gamma);
    s.read("lambda", c.lambda);
    if (const json* gains = s.child("gains")) {
        Section gs(*gains, "train.gains");
        gs.read("k1", c.gains.k1);
        gs.read("k2", c.gains.k2);
        gs.read("k3", c.gains.k3);
        gs.reject_unknown();
    }
    s.read("embedding_dim", c.embedding_dim);
    s.read("patch_size", c.patch_size);
    s.read("pool_grid", c.pool_grid);
    s.read("box_radius", c.box_radius);
    s.read("init_scale", c.init_scale);
    s.read("head_init_scale", c.head_init_scale);
    s.read("descriptor_clip", c.descriptor_clip);
    std::string source = c.context_boxes == ContextBoxSource::ground_truth ? "ground_truth" : "predicted";
    s.read("context_boxes", source);
    require(source == "ground_truth" || source == "predicted", "train.context_boxes",
            "must be \"ground_truth\" or \"predicted\"");
    c.context_boxes = source == "ground_truth" ? ContextBoxSource::ground_truth : ContextBoxSource::predicted;
    s.read("candidate_threshold", c.candidate_threshold);
    s.read("seed", c.seed);
    s.reject_unknown();

    require(c.epochs >= 0, "train.epochs", "must be non-negative");
    require(c.batch_size >= 1, "train.batch_size", "must be positive");
    require(c.learning_rate > 0.0, "train.learning_rate", "must be positive");
    require(c.rho > 0.0 && c.rho <= 1.0, "train.rho", "must lie in (0, 1]");
    require(c.delta > 0.0, "train.delta", "must be positive");
    require(c.gamma >= 0.0, "train.gamma", "must be non-negative");
    require(c.lambda >= 0.0, "train.lambda", "must be non-negative");
    require(c.lambda1 >= 0.0 && c.lambda2 >= 0.0 && c.lambda3 >= 0.0, "train.lambda1",
            "loss weights must be non-negative");
    require(c.embedding_dim >= 1, "train.embedding_dim", "must be positive");
    require(c.patch_size >= 4, "train.patch_size", "must be at least 4");
    require(c.pool_grid >= 1, "train.pool_grid", "must be positive");
    require(c.box_radius > 0.0, "train.box_radius", "must be positive");
    require(c.init_scale > 0.0, "train.init_scale", "must be positive");
    require(c.head_init_scale >= 0.0, "train.head_init_scale", "must be non-negative");
    require(c.descriptor_clip >= 0.0, "train.descriptor_clip", "must be non-negative");
    require(c.candidate_threshold >= 0.0 && c.candidate_threshold <= 1.0, "train.candidate_threshold",
            "must lie in [0, 1]");
}

void parse_eval(const json& doc, EvalSettings& e) {
    Section s(doc, "eval");
    s.read("threshold", e.predict.threshold);
    s.read("nms_radius", e.predict.nms_radius);
    s.read("match_tolerance", e.match_tolerance);
    s.read("operating_threshold", e.operating_threshold);
    s.read("k", e.k);
    s.reject_unknown();
    require(e.predict.threshold >= 0.0 && e.predict.threshold <= 1.0, "eval.threshold", "must lie in [0, 1]");
    require(e.predict.nms_radius >= 0.0, "eval.nms_radius", "must be non-negative");
    require(e.match_tolerance > 0.0, "eval.match_tolerance", "must be positive");
    require(e.operating_threshold >= 0.0 && e.operating_threshold <= 1.0, "eval.operating_threshold",
            "must lie in [0, 1]");
    require(e.k >= 2, "eval.k", "must be at least 2");
}

}  // namespace

void validate_ranges(const TrainConfig& c) {
    require_range(c.rho, 0.01, 0.1, "train.rho");
    require_range(c.delta, 20.0, 100.0, "train.delta");
    require_range(c.gamma, 0.1, 0.5, "train.gamma");
    require_range(c.lambda, 0.5, 2.0, "train.lambda");
    require_range(c.lambda1, 0.1, 1.0, "train.lambda1");
    require_range(c.lambda2, 0.1, 1.0, "train.lambda2");
    require_range(c.lambda3, 0.1, 1.0, "train.lambda3");
    require_range(c.gains.k1, 0.5, 1.5, "train.gains.k1");
    require_range(c.gains.k2, 0.5, 1.5, "train.gains.k2");
    require_range(c.gains.k3, 0.01, 0.1, "train.gains.k3");
}

ProjectConfig parse_config(const json& doc, bool unsafe_ranges) {
    ProjectConfig cfg;
    Section root(doc, "");
    if (const json* d = root.child("dataset")) parse_dataset(*d, cfg.dataset);
    if (const json* t = root.child("train")) parse_train(*t, cfg.train);
    if (const json* e = root.child("eval")) parse_eval(*e, cfg.eval);
    root.reject_unknown();
    cfg.eval.predict.patch_size = cfg.train.patch_size;
    cfg.eval.predict.box_radius = cfg.train.box_radius;
    if (!unsafe_ranges) validate_ranges(cfg.train);
    return cfg;
}

ProjectConfig load_config(const std::filesystem::path& path, bool unsafe_ranges) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open config");
    json doc;
    try {
        doc = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw IoError(path.string(), std::string("invalid JSON: ") + e.what());
    }
    return parse_config(doc, unsafe_ranges);
}

ordered_json to_json(const DatasetConfig& c) {
    ordered_json j;
    j["n_images"] = c.n_images;
    j["width"] = c.width;
    j["height"] = c.height;
    j["mean_objects"] = c.mean_objects;
    j["object_jitter"] = c.object_jitter;
    j["object_radius"] = c.object_radius;
    j["radius_jitter"] = c.radius_jitter;
    j["min_separation"] = c.min_separation;
    j["bit_depth"] = c.bit_depth;
    j["png"] = c.png;
    j["tiers"] = c.tiers;
    j["seed"] = c.seed;
    return j;
}

ordered_json to_json(const TrainConfig& c) {
    ordered_json j;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["lambda1"] = c.lambda1;
    j["lambda2"] = c.lambda2;
    j["lambda3"] = c.lambda3;
    j["components"] = {{"aa", c.components.aa}, {"es", c.components.es}, {"cr", c.components.cr}};
    j["rho"] = c.rho;
    j["delta"] = c.delta;
    j["gamma"] = c.gamma;
    j["lambda"] = c.lambda;
    j["gains"] = {{"k1", c.gains.k1}, {"k2", c.gains.k2}, {"k3", c.gains.k3}};
    j["embedding_dim"] = c.embedding_dim;
    j["patch_size"] = c.patch_size;
    j["pool_grid"] = c.pool_grid;
    j["box_radius"] = c.box_radius;
    j["init_scale"] = c.init_scale;
    j["head_init_scale"] = c.head_init_scale;
    j["descriptor_clip"] = c.descriptor_clip;
    j["context_boxes"] = c.context_boxes == ContextBoxSource::ground_truth ? "ground_truth" : "predicted";
    j["candidate_threshold"] = c.candidate_threshold;
    j["seed"] = c.seed;
    return j;
}

ordered_json to_json(const EvalSettings& e) {
    ordered_json j;
    j["threshold"] = e.predict.threshold;
    j["nms_radius"] = e.predict.nms_radius;
    j["match_tolerance"] = e.match_tolerance;
    j["operating_threshold"] = e.operating_threshold;
    j["k"] = e.k;
    return j;
}

ordered_json to_json(const ProjectConfig& c) {
    ordered_json j;
    j["dataset"] = to_json(c.dataset);
    j["train"] = to_json(c.train);
    j["eval"] = to_json(c.eval);
    return j;
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string config_fingerprint(const TrainConfig& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(config).dump())));
    return buf;
}

}  // namespace tinyema
