#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "paincast/pipeline.hpp"

namespace paincast::report {

/// Pretty-printed JSON with a trailing newline; keys are sorted, so equal
/// documents give equal bytes.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// report.json plus runs/short_term_runs.csv.
void write_short_term(const std::filesystem::path& dir, const pipeline::ShortTermReport& r);
/// report.json plus runs/clusters_year_<y>.json.
void write_long_term(const std::filesystem::path& dir, const pipeline::LongTermReport& r);

/// Reads <dir>/report.json and writes the table CSVs next to it:
///   short-term: table_individualized.csv, table_mixed.csv
///   long-term:  table_long_term.csv, cluster_trajectory.csv, yearly_systolic_bp.csv
/// With `svg`, line charts are added for the long-term tables. Returns the
/// written file names.
std::vector<std::string> render_report(const std::filesystem::path& dir, bool svg = true);

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;  // NaN breaks the line
};

/// Static SVG 1.1 line chart.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

}  // namespace paincast::report
