#include "paincast/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "paincast/csv.hpp"
#include "paincast/error.hpp"
#include "paincast/eval.hpp"

namespace paincast::report {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::string num(const nlohmann::json& v) {
  if (v.is_null()) return "";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return csv::format_double(v.get<double>());
}

std::string num(double v) { return std::isfinite(v) ? csv::format_double(v) : ""; }

const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  static const nlohmann::json null_value;
  const auto it = j.find(key);
  return it == j.end() ? null_value : *it;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// One row per model, three columns per horizon.
std::string short_term_table(const nlohmann::json& report, const std::string& scenario) {
  const auto& cfg = report.at("config");
  const auto horizons = cfg.at("horizons").get<std::vector<int>>();
  const auto models = cfg.at("models").get<std::vector<std::string>>();
  const bool per_patient = scenario == "individualized";
  std::ostringstream os;
  os << "model";
  for (int h : horizons) {
    os << ",mae_" << h << "h,mae_mean_" << h << "h,mae_std_" << h << "h,r2_" << h << "h";
    if (per_patient) os << ",per_patient_mae_" << h << "h";
  }
  os << "\n";
  for (const auto& m : models) {
    os << m;
    for (int h : horizons) {
      const nlohmann::json* cell = nullptr;
      for (const auto& c : report.at("cells")) {
        if (c.at("scenario") == scenario && c.at("model") == m && c.at("horizon") == h) cell = &c;
      }
      if (cell == nullptr || !cell->at("ok").get<bool>()) {
        os << ",,,,";
        if (per_patient) os << ",";
        continue;
      }
      os << "," << num(field(*cell, "selected_mae")) << "," << num(field(*cell, "mae_mean")) << ","
         << num(field(*cell, "mae_std")) << "," << num(field(*cell, "selected_r2"));
      if (per_patient) os << "," << num(field(*cell, "per_patient_mae"));
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
}

void write_short_term(const fs::path& dir, const pipeline::ShortTermReport& r) {
  fs::create_directories(dir / "runs");
  write_json(dir / "report.json", pipeline::to_json(r));
  std::ostringstream os;
  os << "scenario,model,horizon,run,seed,train_objective,test_mae,test_r2\n";
  for (const auto& run : r.runs) {
    os << pipeline::to_string(run.scenario) << "," << run.model << "," << run.horizon << "," << run.run << ","
       << run.seed << "," << num(run.train_objective) << "," << num(run.test_mae) << ","
       << (run.test_r2 ? num(*run.test_r2) : "") << "\n";
  }
  write_text(dir / "runs" / "short_term_runs.csv", os.str());
}

void write_long_term(const fs::path& dir, const pipeline::LongTermReport& r) {
  fs::create_directories(dir / "runs");
  write_json(dir / "report.json", pipeline::to_json(r));
  for (const auto& y : r.years) {
    write_json(dir / "runs" / ("clusters_year_" + std::to_string(y.year) + ".json"), cluster::to_json(y.model));
  }
}

std::vector<std::string> render_report(const fs::path& dir, bool svg) {
  const nlohmann::json report = read_json(dir / "report.json");
  const std::string kind = report.value("kind", "");
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    written.push_back(name);
  };

  if (kind == "short-term") {
    std::set<std::string> scenarios;
    for (const auto& c : report.at("cells")) scenarios.insert(c.at("scenario").get<std::string>());
    for (const auto& s : scenarios) emit("table_" + s + ".csv", short_term_table(report, s));
    return written;
  }
  if (kind != "long-term") throw Error(ErrorCode::MalformedHeader, "report.json has unknown kind '" + kind + "'");

  // One row per model, one AUROC column per test year.
  const auto models = report.at("config").at("models").get<std::vector<std::string>>();
  std::set<int> test_years;
  for (const auto& c : report.at("cells")) test_years.insert(c.at("test_year").get<int>());
  {
    std::ostringstream os;
    os << "model";
    for (int y : test_years) os << ",auroc_year_" << y;
    os << ",variant\n";
    for (const auto& m : models) {
      os << m;
      for (int y : test_years) {
        std::string v;
        for (const auto& c : report.at("cells")) {
          if (c.at("model") == m && c.at("test_year") == y && c.at("ok").get<bool>()) v = num(c.at("auroc"));
        }
        os << "," << v;
      }
      os << "," << eval::kAurocVariant << "\n";
    }
    emit("table_long_term.csv", os.str());
  }

  std::map<std::string, std::map<int, const nlohmann::json*>> by_patient;
  for (const auto& row : report.at("trajectory")) {
    by_patient[row.at("patient_id").get<std::string>()][row.at("year").get<int>()] = &row;
  }
  {
    std::ostringstream os;
    os << "patient_id,year,cluster,mean_pain,pain_band\n";
    for (const auto& [id, years] : by_patient) {
      for (const auto& [y, row] : years) {
        os << id << "," << y << "," << num(row->at("cluster")) << "," << num(row->at("mean_pain")) << ","
           << num(row->at("pain_band")) << "\n";
      }
    }
    emit("cluster_trajectory.csv", os.str());
  }
  {
    std::ostringstream os;
    os << "patient_id,year,mean_systolic_bp\n";
    for (const auto& [id, years] : by_patient) {
      for (const auto& [y, row] : years) os << id << "," << y << "," << num(row->at("mean_systolic_bp")) << "\n";
    }
    emit("yearly_systolic_bp.csv", os.str());
  }

  if (svg) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<Series> clusters, bp;
    for (const auto& [id, years] : by_patient) {
      Series c{id, {}, {}}, b{id, {}, {}};
      for (const auto& [y, row] : years) {
        const auto& label = row->at("cluster");
        const auto& sbp = row->at("mean_systolic_bp");
        c.x.push_back(y);
        c.y.push_back(label.is_null() || label.get<int>() < 0 ? nan : label.get<double>());
        b.x.push_back(y);
        b.y.push_back(sbp.is_null() ? nan : sbp.get<double>());
      }
      clusters.push_back(std::move(c));
      bp.push_back(std::move(b));
    }
    emit("cluster_trajectory.svg", line_chart_svg("Cluster assignment by year", "year", "cluster", clusters));
    emit("yearly_systolic_bp.svg", line_chart_svg("Mean systolic BP by year", "year", "mmHg", bp));
  }
  return written;
}

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  constexpr double kWidth = 640, kHeight = 400, kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - y0) / (y1 - y0) * ph; };
  static const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(title)
     << "</text>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0;
    const double yv = y0 + (y1 - y0) * t / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << csv::format_double(std::round(xv * 100) / 100) << "</text>\n"
       << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
       << csv::format_double(std::round(yv * 100) / 100) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << xml_escape(x_label) << "</text>\n"
     << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
     << kTop + ph / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % 10];
    std::string path;
    bool pen_down = false;
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      if (!std::isfinite(series[s].y[i])) {
        pen_down = false;
        continue;
      }
      path += (pen_down ? " L " : " M ") + csv::format_double(px(series[s].x[i])) + " " +
              csv::format_double(py(series[s].y[i]));
      pen_down = true;
    }
    if (!path.empty()) {
      os << "<path d=\"" << path.substr(1) << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
    }
    if (s < 20) {
      const double ly = kTop + 14.0 * static_cast<double>(s);
      os << "<line x1=\"" << kLeft + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + pw + 28 << "\" y2=\"" << ly
         << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
         << "<text x=\"" << kLeft + pw + 32 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">"
         << xml_escape(series[s].label) << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace paincast::report
