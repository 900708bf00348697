// tinyema: dataset generation, training, evaluation and ablation runs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "tinyema/ablation.hpp"
#include "tinyema/config.hpp"
#include "tinyema/errors.hpp"
#include "tinyema/log.hpp"
#include "tinyema/manifest.hpp"
#include "tinyema/random.hpp"
#include "tinyema/scenegen.hpp"
#include "tinyema/selftest.hpp"
#include "tinyema/snapshot.hpp"

namespace fs = std::filesystem;
using namespace tinyema;

namespace {

constexpr const char* kOutEnv = "TINYEMA_OUT";

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool unsafe_ranges = false;
};

fs::path output_dir(const Common& c, const char* command) {
    fs::path dir;
    if (!c.out.empty()) {
        dir = c.out;
    } else {
        const char* root = std::getenv(kOutEnv);
        dir = fs::path(root != nullptr && *root != '\0' ? root : "runs") / command;
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string(), "cannot create output directory: " + ec.message());
    return dir;
}

ProjectConfig load(const Common& c) {
    ProjectConfig cfg = c.config.empty() ? parse_config(nlohmann::json::object(), c.unsafe_ranges)
                                         : load_config(c.config, c.unsafe_ranges);
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << text;
    if (!out) throw IoError(path.string(), "write failed");
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path manifest_path(const std::string& data) {
    const fs::path p(data);
    return fs::is_directory(p) ? p / "manifest.jsonl" : p;
}

Dataset load_dataset(const std::string& data, int patch_size) {
    Dataset ds = Dataset::load(read_manifest(manifest_path(data)));
    ds.cache_grids(patch_size);
    return ds;
}

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
    if (with_config) {
        cmd->add_option("-c,--config", c.config, "JSON config with optional dataset/train/eval sections")
            ->check(CLI::ExistingFile);
        cmd->add_flag("--unsafe-ranges", c.unsafe_ranges, "accept hyperparameters outside their working intervals");
    }
    cmd->add_option("-o,--out", c.out, std::string("output directory (default $") + kOutEnv + "/<command> or runs/<command>)");
    cmd->add_option("--seed", c.seed, "seed override for this command");
}

int cmd_gen(const Common& c, std::optional<int> n_images, bool png) {
    ProjectConfig cfg = load(c);
    if (c.seed) cfg.dataset.seed = *c.seed;
    if (n_images) cfg.dataset.n_images = *n_images;
    if (png) cfg.dataset.png = true;
    const fs::path out = output_dir(c, "gen");
    const Manifest m = generate_dataset(cfg.dataset, out);
    std::cout << "wrote " << m.size() << " images with " << m.object_count() << " objects to " << out.string() << '\n';
    return 0;
}

int cmd_train(const Common& c, const std::string& data, double val_fraction) {
    ProjectConfig cfg = load(c);
    if (c.seed) cfg.train.seed = *c.seed;
    Dataset ds = load_dataset(data, cfg.train.patch_size);
    if (ds.size() == 0) throw ArgumentError("manifest has no images");

    std::vector<std::size_t> ids(ds.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    ValidationSpec val;
    val.predict = cfg.eval.predict;
    val.match_tolerance = cfg.eval.match_tolerance;
    if (val_fraction > 0.0) {
        Rng rng(mix_seed(cfg.train.seed, 0x7a1));
        rng.shuffle(std::span<std::size_t>(ids));
        auto n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(ids.size()));
        n_val = std::min(std::max<std::size_t>(n_val, 1), ids.size() - 1);
        val.ids.assign(ids.end() - static_cast<std::ptrdiff_t>(n_val), ids.end());
        ids.resize(ids.size() - n_val);
        std::sort(ids.begin(), ids.end());
        std::sort(val.ids.begin(), val.ids.end());
    }
    const TrainResult r = train(ds, ids, cfg.train, val.ids.empty() ? nullptr : &val);
    const fs::path out = output_dir(c, "train");
    write_snapshot(out / "snapshot.json", {cfg.train, r.params, r.states});
    write_text(out / "train_log.jsonl", training_log_jsonl(r.epochs));
    const auto& last = r.epochs.empty() ? EpochLog{} : r.epochs.back();
    std::cout << "trained " << cfg.train.components.label() << " for " << r.epochs.size() << " epochs, final loss "
              << last.loss.total;
    if (last.val_ap) std::cout << ", validation AP " << *last.val_ap;
    std::cout << "\nsnapshot: " << (out / "snapshot.json").string() << '\n';
    return 0;
}

int cmd_eval(const Common& c, const std::string& snapshot_file, const std::string& data) {
    const ProjectConfig cfg = load(c);
    const Snapshot snap = read_snapshot(snapshot_file);
    EvalSettings settings = cfg.eval;
    settings.predict.patch_size = snap.config.patch_size;
    settings.predict.box_radius = snap.config.box_radius;
    Dataset ds = load_dataset(data, snap.config.patch_size);
    std::vector<std::size_t> ids(ds.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;

    const Detector det{snap.config, snap.params, snap.states};
    std::vector<ImageEval> evals;
    const FoldMetrics m = evaluate(det, ds, ids, settings, &evals);
    const fs::path out = output_dir(c, "eval");
    nlohmann::ordered_json j;
    j["label"] = snap.config.components.label();
    j["fingerprint"] = config_fingerprint(snap.config);
    j["images"] = ds.size();
    j["mAP"] = m.map;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["f1"] = m.f1;
    write_text(out / "metrics.json", j.dump(2) + "\n");
    const NamedCurve curve{snap.config.components.label(), pr_curve(evals, settings.match_tolerance)};
    write_text(out / "pr_curve.csv", pr_curves_csv(std::span<const NamedCurve>(&curve, 1)));
    std::cout << j.dump() << '\n';
    return 0;
}

int cmd_ablate(const Common& c, const std::string& data, std::optional<int> k, unsigned threads) {
    ProjectConfig cfg = load(c);
    const std::uint64_t seed = c.seed.value_or(cfg.train.seed);
    const int folds = k.value_or(cfg.eval.k);
    Dataset ds;
    if (data.empty()) {
        InMemoryDataset mem = render_dataset(cfg.dataset);
        ds = Dataset::from_memory(std::move(mem.manifest), std::move(mem.images));
    } else {
        ds = Dataset::load(read_manifest(manifest_path(data)));
    }
    ds.cache_grids(cfg.train.patch_size);
    const auto grid = component_grid();
    const AblationTable table = ablation_run(ds, cfg.train, grid, folds, seed, cfg.eval, threads);

    const fs::path out = output_dir(c, "ablate");
    write_text(out / "metrics.csv", metrics_csv(table));
    const std::string text = render_table(table);
    write_text(out / "table.txt", text);
    std::vector<NamedCurve> curves;
    for (const auto& row : table.rows) {
        if (!row.error) curves.push_back({row.label, row.pr});
    }
    write_text(out / "pr_curves.csv", pr_curves_csv(curves));
    std::cout << text;
    bool any_failed = false;
    for (const auto& row : table.rows) any_failed = any_failed || row.error.has_value();
    if (any_failed) throw Error("one or more ablation rows failed; see table.txt");
    return 0;
}

int cmd_report(const Common& c, const std::string& in_dir) {
    const fs::path in(in_dir);
    const auto rows = parse_metrics_csv(read_text(in / "metrics.csv"));
    const fs::path out = output_dir(c, "report");
    const std::string text = render_table(std::span<const CsvAggregate>(rows));
    write_text(out / "table.txt", text);
    write_text(out / "ablation.svg", ablation_svg(rows));
    if (fs::exists(in / "pr_curves.csv")) {
        const auto curves = parse_pr_curves_csv(read_text(in / "pr_curves.csv"));
        write_text(out / "pr_curves.svg", pr_curves_svg(curves));
    }
    std::cout << text;
    return 0;
}

int cmd_selftest(const Common& c) {
    bool ok = true;
    for (const auto& r : run_selftest(c.seed.value_or(1))) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

std::string one_line(std::string s) {
    for (char& ch : s) {
        if (ch == '\n' || ch == '\r') ch = ' ';
    }
    return s;
}

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char ch : one_line(s)) {
        if (ch == '"' || ch == '\\') out.push_back('\\');
        out.push_back(ch);
    }
    return out + "\"";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tinyema: EMA-stabilized dense tiny-object detection toolkit"};
    app.require_subcommand(1);
    int verbose = 0;
    bool quiet = false;
    app.add_flag("-v,--verbose", verbose, "more log output (repeat for debug)");
    app.add_flag("-q,--quiet", quiet, "suppress warnings");

    Common gen_c, train_c, eval_c, ablate_c, report_c, self_c;
    std::optional<int> n_images;
    bool png = false;
    auto* gen = app.add_subcommand("gen", "render a synthetic dataset (images + manifest.jsonl)");
    add_common(gen, gen_c);
    gen->add_option("-n,--images", n_images, "number of images (overrides dataset.n_images)");
    gen->add_flag("--png", png, "also write PNG copies");

    std::string train_data;
    double val_fraction = 0.0;
    auto* tr = app.add_subcommand("train", "train one configuration; writes snapshot.json and train_log.jsonl");
    add_common(tr, train_c);
    tr->add_option("-d,--data", train_data, "manifest.jsonl or the directory holding it")->required();
    tr->add_option("--val-fraction", val_fraction, "hold out this fraction for per-epoch validation AP")
        ->check(CLI::Range(0.0, 0.9));

    std::string eval_snapshot, eval_data;
    auto* ev = app.add_subcommand("eval", "score a snapshot on a manifest; writes metrics.json and pr_curve.csv");
    add_common(ev, eval_c);
    ev->add_option("-s,--snapshot", eval_snapshot, "snapshot.json from train")->required()->check(CLI::ExistingFile);
    ev->add_option("-d,--data", eval_data, "manifest.jsonl or the directory holding it")->required();

    std::string ablate_data;
    std::optional<int> k;
    unsigned threads = 0;
    auto* ab = app.add_subcommand("ablate", "k-fold component ablation; writes metrics.csv, table.txt, pr_curves.csv");
    add_common(ab, ablate_c);
    ab->add_option("-d,--data", ablate_data, "manifest to use instead of rendering the configured dataset in memory");
    ab->add_option("-k,--k", k, "number of folds (overrides eval.k)")->check(CLI::Range(2, 1000));
    ab->add_option("-j,--threads", threads, "worker threads, 0 = hardware concurrency");

    std::string report_in;
    auto* rp = app.add_subcommand("report", "render table.txt, ablation.svg and pr_curves.svg from ablate output");
    add_common(rp, report_c, false);
    rp->add_option("-i,--in", report_in, "directory holding metrics.csv (and optionally pr_curves.csv)")
        ->required()
        ->check(CLI::ExistingDirectory);

    auto* st = app.add_subcommand("selftest", "run the invariant suite and print one line per check");
    st->add_option("--seed", self_c.seed, "seed for the random instances");

    // CLI11 reports a stray positional as a missing subcommand; name it instead.
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg.starts_with("-")) continue;
        bool known = false;
        for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == arg;
        if (!known) {
            std::cerr << "tinyema: unknown command '" << arg << "'\n\n" << app.help();
            return 2;
        }
        break;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "tinyema: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    log::set_level(quiet ? log::Level::quiet
                         : verbose >= 2 ? log::Level::debug
                         : verbose == 1 ? log::Level::info
                                        : log::Level::warn);
    try {
        if (*gen) return cmd_gen(gen_c, n_images, png);
        if (*tr) return cmd_train(train_c, train_data, val_fraction);
        if (*ev) return cmd_eval(eval_c, eval_snapshot, eval_data);
        if (*ab) return cmd_ablate(ablate_c, ablate_data, k, threads);
        if (*rp) return cmd_report(report_c, report_in);
        if (*st) return cmd_selftest(self_c);
    } catch (const ConfigError& e) {
        std::cerr << "tinyema: error kind=config field=" << e.field() << " message=" << quoted(e.what()) << '\n';
        return 1;
    } catch (const IoError& e) {
        std::cerr << "tinyema: error kind=io path=" << quoted(e.path()) << " message=" << quoted(e.what()) << '\n';
        return 1;
    } catch (const ArgumentError& e) {
        std::cerr << "tinyema: error kind=argument message=" << quoted(e.what()) << '\n';
        return 1;
    } catch (const StateError& e) {
        std::cerr << "tinyema: error kind=state message=" << quoted(e.what()) << '\n';
        return 1;
    } catch (const GenerationError& e) {
        std::cerr << "tinyema: error kind=generation message=" << quoted(e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "tinyema: error kind=internal message=" << quoted(e.what()) << '\n';
        return 1;
    }
    return 2;
}
