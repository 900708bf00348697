#include "tinyema/snapshot.hpp"

#include <fstream>
#include <sstream>

#include "tinyema/config.hpp"
#include "tinyema/errors.hpp"

namespace tinyema {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json keyed_map(const std::map<GroupKey, Vec>& m) {
    ordered_json arr = ordered_json::array();
    for (const auto& [key, vec] : m) arr.push_back({{"kx", key.kx}, {"ky", key.ky}, {"mean", vec}});
    return arr;
}

std::map<GroupKey, Vec> parse_keyed_map(const json& arr) {
    std::map<GroupKey, Vec> m;
    for (const auto& e : arr) {
        m[GroupKey{e.at("kx").get<long>(), e.at("ky").get<long>()}] = e.at("mean").get<Vec>();
    }
    return m;
}

void check_length(const Vec& v, std::size_t n, const char* name) {
    if (v.size() != n) throw ArgumentError(std::string("snapshot block '") + name + "' has the wrong length");
}

}  // namespace

ordered_json snapshot_json(const Snapshot& s) {
    ordered_json j;
    j["format"] = "tinyema-snapshot";
    j["version"] = kSnapshotVersion;
    j["config_hash"] = config_fingerprint(s.config);
    j["config"] = to_json(s.config);

    ordered_json p;
    p["descriptor_dim"] = s.params.descriptor_dim;
    p["embedding_dim"] = s.params.embedding_dim;
    p["context_dim"] = s.params.context_dim;
    const auto blocks = s.params.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) p[ModelParams::kBlockNames[b]] = *blocks[b];
    p["desc_shift"] = s.params.desc_shift;
    p["desc_scale"] = s.params.desc_scale;
    p["desc_clip"] = s.params.desc_clip;
    j["params"] = p;

    const auto& a = s.states.aug;
    j["states"]["aug"] = {{"rho", a.rho}, {"initialized", a.initialized}, {"mu_ref", a.mu_ref}, {"sigma_ref", a.sigma_ref}};
    const auto& st = s.states.stabilizer;
    ordered_json es;
    es["dim"] = st.dim;
    es["rho"] = st.rho;
    es["lambda"] = st.lambda;
    es["delta"] = st.delta;
    es["global_mean"] = st.global_mean;
    es["cluster_means"] = keyed_map(st.cluster_means);
    es["stacks"] = keyed_map(st.stacks);
    j["states"]["stabilizer"] = es;
    const auto& c = s.states.context;
    j["states"]["context"] = {
        {"dim", c.dim}, {"rho", c.rho}, {"gamma", c.gamma}, {"initialized", c.initialized}, {"ref", c.ref}};
    return j;
}

Snapshot parse_snapshot(const json& doc) {
    try {
        if (doc.at("format").get<std::string>() != "tinyema-snapshot") {
            throw ArgumentError("not a snapshot document");
        }
        const int version = doc.at("version").get<int>();
        if (version != kSnapshotVersion) {
            throw ArgumentError("unsupported snapshot version " + std::to_string(version));
        }
        Snapshot s;
        s.config = parse_config(json{{"train", doc.at("config")}}, true).train;
        if (config_fingerprint(s.config) != doc.at("config_hash").get<std::string>()) {
            throw ArgumentError("snapshot config hash does not match its config");
        }

        const json& p = doc.at("params");
        s.params = ModelParams::zeros(p.at("descriptor_dim").get<int>(), p.at("embedding_dim").get<int>(),
                                      p.at("context_dim").get<int>());
        auto blocks = s.params.blocks();
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const std::size_t n = blocks[b]->size();
            *blocks[b] = p.at(ModelParams::kBlockNames[b]).get<Vec>();
            check_length(*blocks[b], n, ModelParams::kBlockNames[b]);
        }
        s.params.desc_shift = p.at("desc_shift").get<Vec>();
        s.params.desc_scale = p.at("desc_scale").get<Vec>();
        s.params.desc_clip = p.at("desc_clip").get<double>();
        check_length(s.params.desc_shift, static_cast<std::size_t>(s.params.descriptor_dim), "desc_shift");
        check_length(s.params.desc_scale, static_cast<std::size_t>(s.params.descriptor_dim), "desc_scale");

        const json& a = doc.at("states").at("aug");
        s.states.aug = EmaScalarPair(a.at("rho").get<double>());
        s.states.aug.initialized = a.at("initialized").get<bool>();
        s.states.aug.mu_ref = a.at("mu_ref").get<double>();
        s.states.aug.sigma_ref = a.at("sigma_ref").get<double>();

        const json& es = doc.at("states").at("stabilizer");
        s.states.stabilizer = StabilizerState(es.at("dim").get<std::size_t>(), es.at("rho").get<double>(),
                                              es.at("lambda").get<double>(), es.at("delta").get<double>());
        s.states.stabilizer.global_mean = es.at("global_mean").get<Vec>();
        s.states.stabilizer.cluster_means = parse_keyed_map(es.at("cluster_means"));
        s.states.stabilizer.stacks = parse_keyed_map(es.at("stacks"));

        const json& c = doc.at("states").at("context");
        s.states.context =
            ContextState(c.at("dim").get<std::size_t>(), c.at("rho").get<double>(), c.at("gamma").get<double>());
        s.states.context.initialized = c.at("initialized").get<bool>();
        s.states.context.ref = c.at("ref").get<Vec>();
        return s;
    } catch (const json::exception& e) {
        throw ArgumentError(std::string("malformed snapshot: ") + e.what());
    } catch (const ConfigError& e) {
        throw ArgumentError(std::string("malformed snapshot config: ") + e.what());
    }
}

void write_snapshot(const std::filesystem::path& path, const Snapshot& snapshot) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << snapshot_json(snapshot).dump(1) << '\n';
    if (!out) throw IoError(path.string(), "write failed");
}

Snapshot read_snapshot(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open snapshot");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError(path.string(), std::string("not valid JSON: ") + e.what());
    }
    return parse_snapshot(doc);
}

std::string training_log_jsonl(std::span<const EpochLog> epochs) {
    std::ostringstream out;
    for (const auto& e : epochs) {
        ordered_json j;
        j["epoch"] = e.epoch;
        j["loss"] = {{"cls", e.loss.cls},         {"bbox", e.loss.bbox},   {"obj", e.loss.obj},
                     {"cluster", e.loss.cluster}, {"stack", e.loss.stack}, {"context", e.loss.context},
                     {"total", e.loss.total}};
        if (e.val_ap) {
            j["val_ap"] = *e.val_ap;
        } else {
            j["val_ap"] = nullptr;
        }
        j["wall_seconds"] = e.wall_seconds;
        out << j.dump() << '\n';
    }
    return out.str();
}

}  // namespace tinyema
