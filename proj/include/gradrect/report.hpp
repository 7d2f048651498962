#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gradrect/experiment.hpp"

namespace gradrect {

struct ReportOptions {
    bool svg = true;
};

/// Writes report.json (FQ/MU proxies and final losses per arm) and, unless
/// disabled, SVG line charts of cosine and retain risk per method with both
/// arms overlaid. New files are appended to the manifest, which is saved
/// again. Throws IoError naming any manifest artifact that is missing.
void emit_report(RunManifest& manifest, const ReportOptions& opt);

struct ChartSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

/// Self-contained SVG line chart, one polyline per series.
std::string render_line_chart_svg(const std::string& title, const std::string& x_label,
                                  const std::string& y_label,
                                  const std::vector<ChartSeries>& series);

}  // namespace gradrect
