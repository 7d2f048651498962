#include "gradrect/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "gradrect/errors.hpp"

namespace gradrect {

using nlohmann::json;

namespace {

std::string xml_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(fmt::format("'{}': {}", path.string(), e.what()));
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << text;
    out.flush();
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

}  // namespace

std::string render_line_chart_svg(const std::string& title, const std::string& x_label,
                                  const std::string& y_label, const std::vector<ChartSeries>& series) {
    constexpr double W = 640, H = 400, ml = 70, mr = 180, mt = 40, mb = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(y)) continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double pw = W - ml - mr, ph = H - mt - mb;
    auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return mt + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::string o = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n"
        "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n"
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        W, H, W, H, ml, xml_escape(title), ml, mt, pw, ph);
    for (int k = 0; k <= 4; ++k) {
        const double yv = y0 + (y1 - y0) * k / 4.0;
        const double xv = x0 + (x1 - x0) * k / 4.0;
        o += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"10\" "
                         "text-anchor=\"end\">{:.3g}</text>\n",
                         ml - 4, sy(yv) + 3, yv);
        o += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"10\" "
                         "text-anchor=\"middle\">{:.3g}</text>\n",
                         sx(xv), H - mb + 14, xv);
    }
    if (y0 < 0 && y1 > 0)
        o += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#bbb\" "
                         "stroke-dasharray=\"4 3\"/>\n",
                         ml, sy(0), ml + pw, sy(0));
    o += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"12\" "
                     "text-anchor=\"middle\">{}</text>\n",
                     ml + pw / 2, H - 12, xml_escape(x_label));
    o += fmt::format("<text x=\"16\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"12\" "
                     "text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1f})\">{}</text>\n",
                     mt + ph / 2, mt + ph / 2, xml_escape(y_label));

    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % std::size(kPalette)];
        const auto& s = series[i];
        o += fmt::format("<g class=\"series\" data-label=\"{}\">\n", xml_escape(s.label));
        // Non-finite values split the series into separate polylines.
        std::string pts;
        auto flush = [&] {
            if (!pts.empty())
                o += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                                 color, pts);
            pts.clear();
        };
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(y)) {
                flush();
                continue;
            }
            if (!pts.empty()) pts += ' ';
            pts += fmt::format("{:.2f},{:.2f}", sx(x), sy(y));
        }
        flush();
        o += "</g>\n";
        const double ly = mt + 14 + 18.0 * static_cast<double>(i);
        o += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" "
                         "stroke-width=\"2\"/>\n",
                         W - mr + 10, ly, W - mr + 30, ly, color);
        o += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                         W - mr + 36, ly + 4, xml_escape(s.label));
    }
    o += "</svg>\n";
    return o;
}

void emit_report(RunManifest& manifest, const ReportOptions& opt) {
    namespace fs = std::filesystem;
    if (manifest.status != "ok")
        throw UsageError(fmt::format("cannot report on run with status '{}'", manifest.status));
    for (const auto& a : manifest.artifacts)
        if (!fs::exists(manifest.run_dir / a.path))
            throw IoError(fmt::format("manifest artifact missing: {} ({})", a.path, a.kind));

    const json eval = read_json(manifest.run_dir / "eval.json");
    json calib;
    if (fs::exists(manifest.run_dir / "calibration.json")) calib = read_json(manifest.run_dir / "calibration.json");

    json report{{"experiment_id", manifest.experiment_id},
                {"config_hash", manifest.config_hash},
                {"fq_statistic", "ln p-value of a two-sample KS test on per-sequence forget NLL vs the retrained gold model"},
                {"mu_statistic", "harmonic mean of retain accuracy, holdout accuracy and exp(-retain NLL per token)"},
                {"original", eval.at("original")},
                {"gold", eval.at("gold")}};

    // Group arms by base method so each chart overlays the two arms.
    std::map<std::string, std::vector<std::pair<std::string, std::vector<StepRecord>>>> by_method;
    json arms = json::object();
    for (auto it = eval.at("arms").begin(); it != eval.at("arms").end(); ++it) {
        const json& a = it.value();
        const auto traj_path = manifest.run_dir / a.at("trajectory").get<std::string>();
        if (!fs::exists(traj_path)) throw IoError(fmt::format("trajectory missing: {}", traj_path.string()));
        auto records = read_trajectory_csv(traj_path);
        json entry{{"method", a.at("method")},
                   {"gru", a.at("gru")},
                   {"fq_proxy", a.at("eval").at("fq_proxy")},
                   {"mu_proxy", a.at("eval").at("mu_proxy")},
                   {"forget_nll_per_token", a.at("eval").at("forget_nll_per_token")},
                   {"retain_nll_per_token", a.at("eval").at("retain_nll_per_token")},
                   {"final_unlearn_loss", a.at("final_unlearn_loss")},
                   {"initial_retain_risk", a.at("initial_retain_risk")},
                   {"final_retain_risk", a.at("final_retain_risk")},
                   {"trajectory", a.at("trajectory")}};
        if (calib.is_object() && calib.contains(it.key())) entry["calibration"] = calib[it.key()];
        arms[it.key()] = entry;
        by_method[a.at("method").get<std::string>()].emplace_back(it.key(), std::move(records));
    }
    report["arms"] = arms;
    json tru = json::object();
    if (eval.contains("tru_arms"))
        for (auto it = eval["tru_arms"].begin(); it != eval["tru_arms"].end(); ++it) tru[it.key()] = it.value().at("eval");
    report["tru_arms"] = tru;

    auto add_artifact = [&](const std::string& kind, const std::string& rel) {
        const Artifact art{kind, rel};
        if (std::find(manifest.artifacts.begin(), manifest.artifacts.end(), art) == manifest.artifacts.end())
            manifest.artifacts.push_back(art);
    };

    json charts = json::array();
    if (opt.svg) {
        for (const auto& [method, list] : by_method) {
            std::vector<ChartSeries> cos_series, risk_series;
            for (const auto& [name, recs] : list) {
                const bool gru = name.find("+GRU") != std::string::npos;
                ChartSeries risk{name, {}};
                ChartSeries cos{gru ? name + " (rectified)" : name, {}};
                ChartSeries pre{name + " (raw)", {}};
                for (const auto& r : recs) {
                    const double x = static_cast<double>(r.step + 1);
                    risk.points.emplace_back(x, r.retain_risk);
                    cos.points.emplace_back(x, (gru ? r.cos_post : r.cos_pre).value_or(NAN));
                    pre.points.emplace_back(x, r.cos_pre.value_or(NAN));
                }
                risk_series.push_back(std::move(risk));
                cos_series.push_back(std::move(cos));
                if (gru) cos_series.push_back(std::move(pre));
            }
            std::string slug;
            for (char c : method) slug += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            const std::string cos_rel = fmt::format("cosine_{}.svg", slug);
            const std::string risk_rel = fmt::format("retain_risk_{}.svg", slug);
            write_text(manifest.run_dir / cos_rel,
                       render_line_chart_svg(method + ": cos(unlearn grad, EMA retain grad)", "step", "cosine",
                                             cos_series));
            write_text(manifest.run_dir / risk_rel,
                       render_line_chart_svg(method + ": retain risk on probe set", "step", "retain NLL",
                                             risk_series));
            add_artifact("svg", cos_rel);
            add_artifact("svg", risk_rel);
            charts.push_back(cos_rel);
            charts.push_back(risk_rel);
        }
    }
    report["charts"] = charts;
    write_text(manifest.run_dir / "report.json", report.dump(2) + "\n");
    add_artifact("report", "report.json");
    save_manifest(manifest);
}

}  // namespace gradrect
