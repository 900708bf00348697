#include "tinyema/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <sstream>
#include <thread>

#include "tinyema/config.hpp"
#include "tinyema/errors.hpp"
#include "tinyema/log.hpp"

namespace tinyema {
namespace {

constexpr const char* kPlusMinus = "\xC2\xB1";

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string pct_cell(const MeanStd& m) { return fixed(100.0 * m.mean, 1) + kPlusMinus + fixed(100.0 * m.std, 1); }

std::string pct_cell_from_csv(const MeanStd& m) { return fixed(m.mean, 1) + kPlusMinus + fixed(m.std, 1); }

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

MeanStd parse_pm(const std::string& cell) {
    const auto pos = cell.find(kPlusMinus);
    if (pos == std::string::npos) throw ArgumentError("expected a mean" + std::string(kPlusMinus) + "std cell, got '" + cell + "'");
    return {std::stod(cell.substr(0, pos)), std::stod(cell.substr(pos + 2))};
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string csv_safe(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f"};

}  // namespace

MeanStd mean_std(std::span<const double> values) {
    MeanStd m;
    if (values.empty()) return m;
    double sum = 0.0;
    for (double v : values) sum += v;
    m.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - m.mean) * (v - m.mean);
        m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return m;
}

FoldMetrics evaluate(const Detector& detector, const Dataset& data, std::span<const std::size_t> ids,
                     const EvalSettings& settings, std::vector<ImageEval>* evals) {
    std::vector<ImageEval> local;
    int tp = 0;
    int fp = 0;
    int fn = 0;
    for (std::size_t id : ids) {
        ImageEval ev{detector.detect(data, id, settings.predict), gt_points(data.manifest.records.at(id).objects)};
        std::vector<Detection> confident;
        for (const auto& d : ev.preds) {
            if (d.confidence >= settings.operating_threshold) confident.push_back(d);
        }
        const MatchResult m = match_detections(confident, ev.gts, settings.match_tolerance);
        tp += m.true_positives;
        fp += m.false_positives;
        fn += m.false_negatives;
        local.push_back(std::move(ev));
    }
    FoldMetrics fm;
    fm.map = average_precision(local, settings.match_tolerance);
    const Prf1 p = prf1(tp, fp, fn);
    fm.precision = p.precision;
    fm.recall = p.recall;
    fm.f1 = p.f1;
    if (evals != nullptr) {
        evals->insert(evals->end(), std::make_move_iterator(local.begin()), std::make_move_iterator(local.end()));
    }
    return fm;
}

void summarize(MetricsReport& report) {
    std::vector<double> map, precision, recall, f1;
    for (const auto& f : report.folds) {
        map.push_back(f.map);
        precision.push_back(f.precision);
        recall.push_back(f.recall);
        f1.push_back(f.f1);
    }
    report.map = mean_std(map);
    report.precision = mean_std(precision);
    report.recall = mean_std(recall);
    report.f1 = mean_std(f1);
}

std::vector<ComponentSet> component_grid() {
    return {
        {false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
        {true, true, false},   {true, false, true},  {false, true, true},  {true, true, true},
    };
}

AblationTable ablation_run(const Dataset& data, const TrainConfig& base, std::span<const ComponentSet> grid, int k,
                           std::uint64_t seed, const EvalSettings& settings, unsigned threads) {
    if (data.grids.size() != data.size()) {
        throw ArgumentError("dataset descriptor cache is missing");
    }
    const std::vector<Fold> folds = kfold_split(data.size(), k, seed);

    AblationTable table;
    table.k = k;
    table.seed = seed;
    table.rows.resize(grid.size());
    std::vector<TrainConfig> configs(grid.size(), base);
    for (std::size_t r = 0; r < grid.size(); ++r) {
        configs[r].components = grid[r];
        configs[r].seed = seed;
        table.rows[r].label = grid[r].label();
        table.rows[r].components = grid[r];
        table.rows[r].fingerprint = config_fingerprint(configs[r]);
    }

    struct Cell {
        std::optional<FoldMetrics> metrics;
        std::vector<ImageEval> evals;
        std::string error;
    };
    const std::size_t n_tasks = grid.size() * folds.size();
    std::vector<Cell> cells(n_tasks);
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t t = next.fetch_add(1); t < n_tasks; t = next.fetch_add(1)) {
            const std::size_t r = t / folds.size();
            const std::size_t f = t % folds.size();
            try {
                const TrainResult trained = train(data, folds[f].train, configs[r]);
                const Detector det{configs[r], trained.params, trained.states};
                cells[t].metrics = evaluate(det, data, folds[f].test, settings, &cells[t].evals);
            } catch (const std::exception& e) {
                cells[t].error = e.what();
            }
        }
    };
    unsigned n_threads = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
    n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, n_tasks));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    for (std::size_t r = 0; r < grid.size(); ++r) {
        auto& row = table.rows[r];
        std::vector<ImageEval> pooled;
        for (std::size_t f = 0; f < folds.size(); ++f) {
            Cell& c = cells[r * folds.size() + f];
            if (!c.metrics) {
                row.error = "fold " + std::to_string(f + 1) + ": " + c.error;
                row.folds.clear();
                log::warn(row.label + " aborted: " + *row.error);
                break;
            }
            row.folds.push_back(*c.metrics);
            pooled.insert(pooled.end(), std::make_move_iterator(c.evals.begin()), std::make_move_iterator(c.evals.end()));
        }
        if (!row.error) {
            summarize(row);
            row.pr = pr_curve(pooled, settings.match_tolerance);
        }
    }
    return table;
}

std::string metrics_csv(const AblationTable& table) {
    std::ostringstream out;
    out << "config,fold,mAP,precision,recall,f1,fingerprint\n";
    for (const auto& row : table.rows) {
        if (row.error) {
            out << row.label << ",error," << csv_safe(*row.error) << ",,,," << row.fingerprint << '\n';
            continue;
        }
        for (std::size_t f = 0; f < row.folds.size(); ++f) {
            const auto& m = row.folds[f];
            out << row.label << ',' << (f + 1) << ',' << fixed(m.map, 6) << ',' << fixed(m.precision, 6) << ','
                << fixed(m.recall, 6) << ',' << fixed(m.f1, 6) << ',' << row.fingerprint << '\n';
        }
    }
    for (const auto& row : table.rows) {
        if (row.error) continue;
        out << row.label << ",mean" << kPlusMinus << "std," << pct_cell(row.map) << ',' << pct_cell(row.precision) << ','
            << pct_cell(row.recall) << ',' << pct_cell(row.f1) << ',' << row.fingerprint << '\n';
    }
    return out.str();
}

std::vector<CsvAggregate> parse_metrics_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::vector<CsvAggregate> rows;
    bool header = true;
    const std::string aggregate_tag = std::string("mean") + kPlusMinus + "std";
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            if (line.rfind("config,fold,", 0) != 0) throw ArgumentError("metrics CSV header not recognized");
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() < 6 || cells[1] != aggregate_tag) continue;
        rows.push_back({cells[0], parse_pm(cells[2]), parse_pm(cells[3]), parse_pm(cells[4]), parse_pm(cells[5])});
    }
    return rows;
}

std::string render_table(std::span<const CsvAggregate> rows) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %-12s %-14s %-12s %-12s\n", "Model", "mAP (%)", "Precision (%)", "Recall (%)",
                  "F1 (%)");
    out << buf;
    for (const auto& r : rows) {
        // Pad by hand: the plus-minus sign is two bytes but one column.
        const auto pad = [](const std::string& s, std::size_t width) {
            const std::size_t visible = s.size() - (s.find(kPlusMinus) != std::string::npos ? 1 : 0);
            return s + std::string(width > visible ? width - visible : 0, ' ');
        };
        out << pad(r.label, 13) << pad(pct_cell_from_csv(r.map), 13) << pad(pct_cell_from_csv(r.precision), 15)
            << pad(pct_cell_from_csv(r.recall), 13) << pct_cell_from_csv(r.f1) << '\n';
    }
    return out.str();
}

std::string render_table(const AblationTable& table) {
    std::vector<CsvAggregate> rows;
    for (const auto& r : table.rows) {
        if (r.error) continue;
        const auto scale = [](MeanStd m) { return MeanStd{100.0 * m.mean, 100.0 * m.std}; };
        rows.push_back({r.label, scale(r.map), scale(r.precision), scale(r.recall), scale(r.f1)});
    }
    std::string out = render_table(std::span<const CsvAggregate>(rows));
    for (const auto& r : table.rows) {
        if (r.error) out += r.label + "  (failed: " + *r.error + ")\n";
    }
    return out;
}

std::string ablation_svg(std::span<const CsvAggregate> rows) {
    const int width = 760;
    const int height = 360;
    const int left = 50;
    const int right = 20;
    const int top = 30;
    const int bottom = 60;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    const char* metrics[] = {"mAP", "Precision", "Recall", "F1"};

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (int t = 0; t <= 10; t += 2) {
        const double y = top + plot_h * (1.0 - t / 10.0);
        s << "<line x1=\"" << left << "\" y1=\"" << fixed(y, 1) << "\" x2=\"" << width - right << "\" y2=\""
          << fixed(y, 1) << "\" stroke=\"#ddd\"/>\n";
        s << "<text x=\"" << left - 6 << "\" y=\"" << fixed(y + 4, 1) << "\" text-anchor=\"end\">" << t * 10
          << "</text>\n";
    }
    const double group_w = rows.empty() ? plot_w : plot_w / static_cast<double>(rows.size());
    const double bar_w = group_w * 0.8 / 4.0;
    for (std::size_t g = 0; g < rows.size(); ++g) {
        const MeanStd vals[] = {rows[g].map, rows[g].precision, rows[g].recall, rows[g].f1};
        const double gx = left + g * group_w + group_w * 0.1;
        for (int m = 0; m < 4; ++m) {
            const double v = std::clamp(vals[m].mean, 0.0, 100.0);
            const double h = plot_h * v / 100.0;
            const double x = gx + m * bar_w;
            s << "<rect x=\"" << fixed(x, 1) << "\" y=\"" << fixed(top + plot_h - h, 1) << "\" width=\""
              << fixed(bar_w - 1, 1) << "\" height=\"" << fixed(h, 1) << "\" fill=\"" << kPalette[m] << "\"/>\n";
            const double y_hi = top + plot_h * (1.0 - std::clamp(vals[m].mean + vals[m].std, 0.0, 100.0) / 100.0);
            const double y_lo = top + plot_h * (1.0 - std::clamp(vals[m].mean - vals[m].std, 0.0, 100.0) / 100.0);
            const double cx = x + 0.5 * (bar_w - 1);
            s << "<line x1=\"" << fixed(cx, 1) << "\" y1=\"" << fixed(y_hi, 1) << "\" x2=\"" << fixed(cx, 1)
              << "\" y2=\"" << fixed(y_lo, 1) << "\" stroke=\"black\"/>\n";
        }
        s << "<text x=\"" << fixed(gx + 2 * bar_w, 1) << "\" y=\"" << height - bottom + 16
          << "\" text-anchor=\"middle\">" << xml_escape(rows[g].label) << "</text>\n";
    }
    for (int m = 0; m < 4; ++m) {
        const int lx = left + m * 110;
        s << "<rect x=\"" << lx << "\" y=\"" << height - 22 << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[m]
          << "\"/>\n";
        s << "<text x=\"" << lx + 14 << "\" y=\"" << height - 13 << "\">" << metrics[m] << " (%)</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string pr_curves_svg(std::span<const NamedCurve> curves) {
    const int size = 420;
    const int margin = 45;
    const double plot = size - 2 * margin;
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 150 << "\" height=\"" << size
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << plot << "\" height=\"" << plot
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 10; t += 2) {
        const double v = t / 10.0;
        s << "<text x=\"" << fixed(margin + v * plot, 1) << "\" y=\"" << size - margin + 14
          << "\" text-anchor=\"middle\">" << fixed(v, 1) << "</text>\n";
        s << "<text x=\"" << margin - 6 << "\" y=\"" << fixed(margin + (1 - v) * plot + 4, 1)
          << "\" text-anchor=\"end\">" << fixed(v, 1) << "</text>\n";
    }
    s << "<text x=\"" << size / 2 << "\" y=\"" << size - 8 << "\" text-anchor=\"middle\">Recall</text>\n";
    s << "<text x=\"12\" y=\"" << size / 2 << "\" transform=\"rotate(-90 12 " << size / 2
      << ")\" text-anchor=\"middle\">Precision</text>\n";
    for (std::size_t c = 0; c < curves.size(); ++c) {
        const char* color = kPalette[c % 8];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        // Thin long curves to keep files small; the shape is unchanged at this scale.
        const auto& pts = curves[c].points;
        const std::size_t step = std::max<std::size_t>(1, pts.size() / 400);
        for (std::size_t i = 0; i < pts.size(); i += step) {
            s << fixed(margin + pts[i].recall * plot, 1) << ',' << fixed(margin + (1 - pts[i].precision) * plot, 1)
              << ' ';
        }
        if (!pts.empty()) {
            s << fixed(margin + pts.back().recall * plot, 1) << ',' << fixed(margin + (1 - pts.back().precision) * plot, 1);
        }
        s << "\"/>\n";
        s << "<text x=\"" << size - margin + 15 << "\" y=\"" << margin + 14 * static_cast<int>(c) << "\" fill=\""
          << color << "\">" << xml_escape(curves[c].label) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string pr_curves_csv(std::span<const NamedCurve> curves) {
    std::ostringstream out;
    out << "label,recall,precision,confidence\n";
    for (const auto& c : curves) {
        for (const auto& p : c.points) {
            out << c.label << ',' << fixed(p.recall, 6) << ',' << fixed(p.precision, 6) << ',' << fixed(p.confidence, 6)
                << '\n';
        }
    }
    return out.str();
}

std::vector<NamedCurve> parse_pr_curves_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::vector<NamedCurve> curves;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        const auto cells = split(line, ',');
        if (cells.size() != 4) throw ArgumentError("PR curve rows need 4 columns");
        if (curves.empty() || curves.back().label != cells[0]) curves.push_back({cells[0], {}});
        curves.back().points.push_back({std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])});
    }
    return curves;
}

}  // namespace tinyema
