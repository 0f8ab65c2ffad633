#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "paincast/cluster.hpp"
#include "paincast/csv.hpp"
#include "paincast/error.hpp"
#include "paincast/ingest.hpp"
#include "paincast/parallel.hpp"
#include "paincast/pipeline.hpp"
#include "paincast/report.hpp"
#include "paincast/rng.hpp"
#include "paincast/stats.hpp"
#include "paincast/synth.hpp"

namespace fs = std::filesystem;
using namespace paincast;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::string config;
};

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open config file " + path);
  try {
    auto j = nlohmann::json::parse(in);
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config file must hold a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, "config file " + path + ": " + e.what());
  }
}

// --seed, then the config file, then PAINCAST_SEED, then 1.
std::uint64_t resolve_seed(const Globals& g, const nlohmann::json& cfg) {
  if (g.seed) return *g.seed;
  if (cfg.contains("seed")) return cfg.at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("PAINCAST_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::InvalidConfig, std::string("PAINCAST_SEED is not an unsigned integer: ") + env);
  }
  return 1;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

template <typename Fn>
void write_stream(const fs::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  fn(out);
}

CohortDataset load_cohort_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "input directory " + dir + " does not exist");
  return load_cohort(dir);
}

CohortDataset ingest_file(const std::string& path, const IngestConfig& cfg, std::vector<Reject>* rejects) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  ParseResult parsed = parse_records(in);
  if (rejects != nullptr) *rejects = std::move(parsed.rejects);
  const auto visits = segment_visits(std::move(parsed.records), cfg.visit_gap);
  return build_cohort(visits, cfg.rounding);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_k_range(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) throw std::invalid_argument(text);
    const auto lo = std::stoul(text.substr(0, dots));
    const auto hi = std::stoul(text.substr(dots + 2));
    if (lo < 2 || hi < lo) throw std::invalid_argument(text);
    std::vector<std::size_t> ks;
    for (auto k = lo; k <= hi; ++k) ks.push_back(k);
    return ks;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, "--select-k expects LO..HI with 2 <= LO <= HI, got '" + text + "'");
  }
}

// Present values of one channel of one patient, in time order.
std::vector<double> channel_series(const CohortDataset& data, const std::string& selector) {
  const auto colon = selector.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidConfig, "--series expects patient:channel");
  const std::string id = selector.substr(0, colon);
  const auto channel = channel_from_name(selector.substr(colon + 1));
  if (!channel) throw Error(ErrorCode::InvalidConfig, "unknown channel '" + selector.substr(colon + 1) + "'");
  const auto it = data.patients.find(id);
  if (it == data.patients.end()) throw Error(ErrorCode::ShapeMismatch, "patient '" + id + "' not in cohort");
  std::vector<double> y;
  for (const auto& [year, py] : it->second) {
    for (std::size_t r = 0; r < py.grid.rows(); ++r) {
      if (py.grid.present(r, *channel)) y.push_back(py.grid.value(r, *channel));
    }
  }
  return y;
}

int run(int argc, char** argv) {
  CLI::App app{"paincast: pain forecasting and predictive clustering on vital-sign cohorts"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Master seed (falls back to PAINCAST_SEED)");
  app.add_option("--threads", g.threads, "Worker cap, 0 = all cores")->check(CLI::NonNegativeNumber);
  app.add_option("--config", g.config, "JSON config file; flags override its values");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort with planted phenotypes");
  std::string synth_out;
  std::optional<int> synth_patients, synth_years;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--patients", synth_patients, "Number of patients");
  synth->add_option("--years", synth_years, "Number of years");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse and validate a record CSV, grid it hourly");
  std::string ingest_in, ingest_out, ingest_rounding = "ceil";
  double visit_gap_hours = 12.0;
  ingest->add_option("--in", ingest_in, "Record CSV")->required();
  ingest->add_option("--out", ingest_out, "Output directory")->required();
  ingest->add_option("--rounding", ingest_rounding, "ceil or nearest");
  ingest->add_option("--visit-gap", visit_gap_hours, "Visit split threshold in hours");

  // interpolate
  auto* interp = app.add_subcommand("interpolate", "Fill short gaps linearly and report missingness");
  std::string interp_in, interp_out, interp_rounding = "ceil";
  int max_gap = 2;
  interp->add_option("--in", interp_in, "Cohort directory or record CSV")->required();
  interp->add_option("--out", interp_out, "Output directory")->required();
  interp->add_option("--max-gap", max_gap, "Largest gap in hours that is filled");
  interp->add_option("--rounding", interp_rounding, "ceil or nearest (record CSV input)");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "ACF/PACF, ADF and optional ARIMA fit of one series");
  std::string diag_in, diag_out, diag_series;
  std::size_t max_lag = 20;
  bool diag_arima = false;
  diag->add_option("--in", diag_in, "Cohort directory")->required();
  diag->add_option("--out", diag_out, "Output directory")->required();
  diag->add_option("--series", diag_series, "patient:channel")->required();
  diag->add_option("--max-lag", max_lag, "Largest lag");
  diag->add_flag("--arima", diag_arima, "Fit the ARIMA grid and report residual correlograms");

  // cluster
  auto* clus = app.add_subcommand("cluster", "DTW k-means of one year");
  std::string clus_in, clus_out, select_k_text;
  int clus_year = 1;
  std::size_t clus_k = 7, clus_max_len = 200;
  clus->add_option("--in", clus_in, "Cohort directory")->required();
  clus->add_option("--out", clus_out, "Output directory")->required();
  clus->add_option("--year", clus_year, "Year index")->required();
  auto* k_opt = clus->add_option("--k", clus_k, "Number of clusters");
  clus->add_option("--select-k", select_k_text, "Range LO..HI scored by silhouette")->excludes(k_opt);
  clus->add_option("--max-len", clus_max_len, "Reduced series length");

  // short-term
  auto* st = app.add_subcommand("short-term", "Short-term pain forecasting experiment");
  std::string st_in, st_out, st_models, st_horizons, st_scenario;
  std::optional<std::size_t> st_runs, st_window, st_stride;
  st->add_option("--in", st_in, "Cohort directory")->required();
  st->add_option("--out", st_out, "Output directory")->required();
  st->add_option("--models", st_models, "Comma list of rf,arima,mlp,lstm,cpc-rf,vae-rf");
  st->add_option("--runs", st_runs, "Repetitions per model");
  st->add_option("--window", st_window, "Window length in hours");
  st->add_option("--horizons", st_horizons, "Comma list of horizons in hours");
  st->add_option("--scenario", st_scenario, "individualized, mixed or both");
  st->add_option("--stride", st_stride, "Window stride in hours");

  // long-term
  auto* lt = app.add_subcommand("long-term", "Predictive clustering across years");
  std::string lt_in, lt_out, lt_models;
  std::optional<std::size_t> lt_k, lt_max_len;
  lt->add_option("--in", lt_in, "Cohort directory")->required();
  lt->add_option("--out", lt_out, "Output directory")->required();
  lt->add_option("--k", lt_k, "Clusters per year");
  lt->add_option("--models", lt_models, "Comma list of mlp,rf,cpc-rf,vae-rf");
  lt->add_option("--max-len", lt_max_len, "Reduced series length");

  // report
  auto* rep = app.add_subcommand("report", "Render tables and charts from a run directory");
  std::string rep_dir;
  bool no_svg = false;
  rep->add_option("--run", rep_dir, "Run directory holding report.json")->required();
  rep->add_flag("--no-svg", no_svg, "Skip SVG charts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  set_thread_count(g.threads);
  const nlohmann::json file_cfg = load_config(g.config);
  const std::uint64_t seed = resolve_seed(g, file_cfg);

  if (*synth) {
    SynthConfig cfg;
    from_json(file_cfg, cfg);
    cfg.seed = seed;
    if (synth_patients) cfg.n_patients = *synth_patients;
    if (synth_years) cfg.n_years = *synth_years;
    cfg.validate();
    const SynthCohort cohort = generate_cohort(cfg);
    fs::create_directories(synth_out);
    write_stream(fs::path(synth_out) / "records.csv", [&](std::ostream& o) { write_records_csv(o, cohort.records); });
    write_stream(fs::path(synth_out) / "truth.csv", [&](std::ostream& o) { write_truth_csv(o, cohort.truth); });
    save_cohort(synth_out, interpolate_cohort(cohort.dataset, 2));
    nlohmann::json echo;
    to_json(echo, cfg);
    report::write_json(fs::path(synth_out) / "config.json", echo);
    std::cerr << "synth: " << cohort.records.size() << " records for " << cfg.n_patients << " patients\n";
    return 0;
  }

  if (*ingest) {
    IngestConfig cfg;
    cfg.rounding = rounding_from_string(ingest_rounding);
    cfg.visit_gap = static_cast<Minutes>(visit_gap_hours * kMinutesPerHour);
    cfg.validate();
    std::vector<Reject> rejects;
    const CohortDataset data = ingest_file(ingest_in, cfg, &rejects);
    fs::create_directories(ingest_out);
    save_cohort(ingest_out, data);
    write_stream(fs::path(ingest_out) / "rejects.jsonl", [&](std::ostream& o) { write_rejects_jsonl(o, rejects); });
    report::write_json(fs::path(ingest_out) / "config.json",
                       {{"in", ingest_in}, {"rounding", ingest_rounding}, {"visit_gap_hours", visit_gap_hours}});
    std::cerr << "ingest: " << data.n_patients() << " patients, " << rejects.size() << " rejected rows\n";
    return 0;
  }

  if (*interp) {
    if (max_gap < 1) throw Error(ErrorCode::InvalidConfig, "--max-gap must be >= 1");
    CohortDataset raw;
    if (fs::is_directory(interp_in)) {
      raw = load_cohort_dir(interp_in);
    } else {
      IngestConfig cfg;
      cfg.rounding = rounding_from_string(interp_rounding);
      raw = ingest_file(interp_in, cfg, nullptr);
    }
    const CohortDataset filled = interpolate_cohort(raw, max_gap);
    fs::create_directories(interp_out);
    save_cohort(interp_out, filled);
    write_stream(fs::path(interp_out) / "missingness.csv",
                 [&](std::ostream& o) { write_missingness_csv(o, missingness_report(raw, filled)); });
    report::write_json(fs::path(interp_out) / "config.json",
                       {{"in", interp_in}, {"max_gap", max_gap}, {"rounding", interp_rounding}});
    return 0;
  }

  if (*diag) {
    const CohortDataset data = load_cohort_dir(diag_in);
    const std::vector<double> y = channel_series(data, diag_series);
    fs::create_directories(diag_out);
    const fs::path out(diag_out);
    write_stream(out / "acf.csv", [&](std::ostream& o) { stats::write_correlogram_csv(o, stats::acf(y, max_lag)); });
    write_stream(out / "pacf.csv", [&](std::ostream& o) { stats::write_correlogram_csv(o, stats::pacf(y, max_lag)); });
    nlohmann::json summary{{"series", diag_series}, {"n", y.size()}, {"max_lag", max_lag}};
    try {
      const auto adf = stats::adf_test(y);
      summary["adf"] = {{"statistic", adf.statistic}, {"lags", adf.n_lags}, {"reject_5", adf.reject_5}};
    } catch (const Error& e) {
      summary["adf"] = {{"error", e.what()}};
    }
    if (diag_arima) {
      stats::GridSearchOptions opts;
      opts.residual_lags = max_lag;
      const auto result = stats::arima_grid_search(y, opts);
      summary["arima"] = stats::to_json(result.best);
      if (result.residual_acf) {
        write_stream(out / "residual_acf.csv", [&](std::ostream& o) { stats::write_correlogram_csv(o, *result.residual_acf); });
      }
      if (result.residual_pacf) {
        write_stream(out / "residual_pacf.csv",
                     [&](std::ostream& o) { stats::write_correlogram_csv(o, *result.residual_pacf); });
      }
    }
    report::write_json(out / "diagnose.json", summary);
    return 0;
  }

  if (*clus) {
    const CohortDataset data = load_cohort_dir(clus_in);
    const ChannelStats stats = channel_stats(data);
    cluster::ReduceOptions reduce;
    reduce.max_len = clus_max_len;
    std::vector<std::string> ids;
    std::vector<dtw::Sequence> series;
    for (const auto& [id, years] : data.patients) {
      const auto it = years.find(clus_year);
      if (it == years.end()) continue;
      try {
        series.push_back(cluster::reduce_series(it->second.grid, stats, reduce));
        ids.push_back(id);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptySequence) throw;
      }
    }
    cluster::KMeansOptions opts;
    opts.seed = derive_seed(seed, {static_cast<std::uint64_t>(clus_year)});
    fs::create_directories(clus_out);
    const fs::path out(clus_out);
    if (!select_k_text.empty()) {
      const auto ks = parse_k_range(select_k_text);
      std::vector<int> reference;
      const fs::path truth_path = fs::path(clus_in) / "truth.csv";
      if (fs::exists(truth_path)) {
        std::ifstream in(truth_path);
        std::map<std::string, int> by_id;
        for (const auto& t : read_truth_csv(in)) {
          if (t.year == clus_year) by_id[t.patient_id] = t.phenotype;
        }
        for (const auto& id : ids) reference.push_back(by_id.count(id) ? by_id[id] : -1);
        if (std::count(reference.begin(), reference.end(), -1) > 0) reference.clear();
      }
      const auto result = cluster::select_k(series, ks, opts, reference);
      std::ostringstream os;
      os << "k,silhouette,nmi,purity,inertia\n";
      for (const auto& row : result.rows) {
        os << row.k << "," << csv::format_double(row.silhouette) << ","
           << (row.nmi ? csv::format_double(*row.nmi) : "") << "," << (row.purity ? csv::format_double(*row.purity) : "")
           << "," << csv::format_double(row.inertia) << "\n";
      }
      write_file(out / "select_k.csv", os.str());
      report::write_json(out / "config.json", {{"year", clus_year}, {"select_k", select_k_text},
                                               {"max_len", clus_max_len}, {"seed", seed}, {"best_k", result.best_k}});
      std::cerr << "cluster: best k = " << result.best_k << "\n";
      return 0;
    }
    opts.k = clus_k;
    cluster::ClusterModel model = cluster::kmeans_dtw(series, opts);
    model.year = clus_year;
    model.ids = ids;
    report::write_json(out / "clusters.json", cluster::to_json(model));
    std::ostringstream os;
    os << "patient_id,cluster\n";
    for (std::size_t i = 0; i < ids.size(); ++i) os << ids[i] << "," << model.labels[i] << "\n";
    write_file(out / "labels.csv", os.str());
    report::write_json(out / "config.json",
                       {{"year", clus_year}, {"k", clus_k}, {"max_len", clus_max_len}, {"seed", seed}});
    return 0;
  }

  if (*st) {
    pipeline::ShortTermConfig cfg = pipeline::short_term_config_from_json(file_cfg);
    cfg.seed = seed;
    if (!st_models.empty()) cfg.models = split_list(st_models);
    if (st_runs) cfg.runs = *st_runs;
    if (st_window) cfg.window = *st_window;
    if (st_stride) cfg.stride = *st_stride;
    if (!st_horizons.empty()) {
      cfg.horizons.clear();
      for (const auto& h : split_list(st_horizons)) {
        try {
          cfg.horizons.push_back(std::stoi(h));
        } catch (const std::exception&) {
          throw Error(ErrorCode::InvalidConfig, "bad horizon '" + h + "'");
        }
      }
    }
    if (!st_scenario.empty()) {
      cfg.scenarios = st_scenario == "both"
                          ? std::vector<pipeline::Scenario>{pipeline::Scenario::Individualized, pipeline::Scenario::Mixed}
                          : std::vector<pipeline::Scenario>{pipeline::scenario_from_string(st_scenario)};
    }
    cfg.validate();
    const CohortDataset data = load_cohort_dir(st_in);
    const auto result = pipeline::run_short_term(data, cfg);
    report::write_short_term(st_out, result);
    report::write_json(fs::path(st_out) / "config.json", pipeline::to_json(cfg));
    report::render_report(st_out, true);
    for (const auto& c : result.cells) {
      if (!c.ok) std::cerr << "short-term: " << c.model << " " << pipeline::to_string(c.scenario) << " h=" << c.horizon
                           << " failed: " << c.error << "\n";
    }
    return 0;
  }

  if (*lt) {
    pipeline::LongTermConfig cfg = pipeline::long_term_config_from_json(file_cfg);
    cfg.seed = seed;
    if (lt_k) cfg.k = *lt_k;
    if (lt_max_len) cfg.reduce.max_len = *lt_max_len;
    if (!lt_models.empty()) cfg.models = split_list(lt_models);
    cfg.validate();
    const CohortDataset data = load_cohort_dir(lt_in);
    const auto result = pipeline::run_long_term(data, cfg);
    report::write_long_term(lt_out, result);
    report::write_json(fs::path(lt_out) / "config.json", pipeline::to_json(cfg));
    report::render_report(lt_out, true);
    for (const auto& c : result.cells) {
      if (!c.ok) std::cerr << "long-term: " << c.model << " year " << c.test_year << " failed: " << c.error << "\n";
    }
    return 0;
  }

  if (*rep) {
    for (const auto& f : report::render_report(rep_dir, !no_svg)) std::cerr << "wrote " << f << "\n";
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "paincast: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::Config: return 2;
      case ErrorKind::Data: return 3;
      case ErrorKind::Model: return 4;
    }
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "paincast: config: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "paincast: " << e.what() << "\n";
    return 3;
  }
}
