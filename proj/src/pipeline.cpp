#include "paincast/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "paincast/csv.hpp"
#include "paincast/error.hpp"
#include "paincast/eval.hpp"
#include "paincast/parallel.hpp"
#include "paincast/rng.hpp"

namespace paincast::pipeline {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::optional<const RawPainObservation*> raw_pain_obs(const PatientYear& py, Hour hour) {
  const RawPainObservation* best = nullptr;
  for (const auto& o : py.raw_pain) {
    if (o.hour == hour && (best == nullptr || o.timestamp >= best->timestamp)) best = &o;
  }
  if (best == nullptr) return std::nullopt;
  return best;
}

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::optional<double> sample_std(std::span<const double> v) {
  if (v.size() < 2) return std::nullopt;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::optional<double> safe_r2(std::span<const double> pred, std::span<const double> truth) {
  try {
    return eval::r2(pred, truth);
  } catch (const Error&) {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// JSON helpers for nested configs.

nlohmann::json train_json(const nn::TrainConfig& c) {
  nlohmann::json j{{"batch", c.batch}, {"epochs", c.epochs}, {"lr", c.lr}, {"seed", c.seed}};
  j["patience"] = c.patience ? nlohmann::json(*c.patience) : nlohmann::json(nullptr);
  return j;
}

nn::TrainConfig train_from_json(const nlohmann::json& j, nn::TrainConfig c) {
  if (j.contains("batch")) j.at("batch").get_to(c.batch);
  if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
  if (j.contains("lr")) j.at("lr").get_to(c.lr);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("patience")) {
    c.patience = j.at("patience").is_null() ? std::nullopt : std::optional<std::size_t>(j.at("patience").get<std::size_t>());
  }
  c.validate();
  return c;
}

nlohmann::json arima_json(const stats::GridSearchOptions& o) {
  nlohmann::json j{{"max_p", o.max_p}, {"max_q", o.max_q}, {"residual_lags", o.residual_lags},
                   {"max_iter", o.fit.max_iter}, {"tol", o.fit.tol}};
  j["d"] = o.d ? nlohmann::json(*o.d) : nlohmann::json(nullptr);
  j["adf_lags"] = o.adf_lags ? nlohmann::json(*o.adf_lags) : nlohmann::json(nullptr);
  return j;
}

stats::GridSearchOptions arima_from_json(const nlohmann::json& j, stats::GridSearchOptions o) {
  if (j.contains("max_p")) j.at("max_p").get_to(o.max_p);
  if (j.contains("max_q")) j.at("max_q").get_to(o.max_q);
  if (j.contains("residual_lags")) j.at("residual_lags").get_to(o.residual_lags);
  if (j.contains("max_iter")) j.at("max_iter").get_to(o.fit.max_iter);
  if (j.contains("tol")) j.at("tol").get_to(o.fit.tol);
  if (j.contains("d")) o.d = j.at("d").is_null() ? std::nullopt : std::optional<int>(j.at("d").get<int>());
  if (j.contains("adf_lags")) {
    o.adf_lags = j.at("adf_lags").is_null() ? std::nullopt : std::optional<std::size_t>(j.at("adf_lags").get<std::size_t>());
  }
  if (o.max_p < 0 || o.max_p > stats::kMaxArOrder || o.max_q < 0 || o.max_q > stats::kMaxMaOrder) {
    throw Error(ErrorCode::InvalidConfig, "ARIMA grid bounds must lie in [0, 5]");
  }
  return o;
}

nlohmann::json kmeans_json(const cluster::KMeansOptions& o) {
  nlohmann::json j{{"n_init", o.n_init}, {"max_iter", o.max_iter}, {"dba_iter", o.dba_iter}, {"tol", o.tol}};
  j["band_width"] = o.band_width ? nlohmann::json(*o.band_width) : nlohmann::json(nullptr);
  return j;
}

cluster::KMeansOptions kmeans_from_json(const nlohmann::json& j, cluster::KMeansOptions o) {
  if (j.contains("n_init")) j.at("n_init").get_to(o.n_init);
  if (j.contains("max_iter")) j.at("max_iter").get_to(o.max_iter);
  if (j.contains("dba_iter")) j.at("dba_iter").get_to(o.dba_iter);
  if (j.contains("tol")) j.at("tol").get_to(o.tol);
  if (j.contains("band_width")) {
    o.band_width = j.at("band_width").is_null() ? std::nullopt
                                                : std::optional<std::size_t>(j.at("band_width").get<std::size_t>());
  }
  return o;
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

// ---------------------------------------------------------------------------
// Pretraining windows: runs of `length` grid hours inside one visit that end
// at or before the patient's cutoff.

struct WindowRef {
  const PatientYear* py = nullptr;
  std::size_t row_begin = 0;
};

std::vector<WindowRef> windows_until(const CohortDataset& data, const std::map<std::string, Hour>& cutoff,
                                     std::size_t length, std::size_t stride) {
  std::vector<WindowRef> out;
  for (const auto& [id, years] : data.patients) {
    const auto it = cutoff.find(id);
    if (it == cutoff.end()) continue;
    for (const auto& [year, py] : years) {
      for (const auto& [b, e] : py.grid.visit_ranges()) {
        for (std::size_t r = b; r + length <= e; r += stride) {
          if (py.grid.hours[r + length - 1] > it->second) break;
          out.push_back({&py, r});
        }
      }
    }
  }
  return out;
}

std::vector<WindowRef> subsample(std::vector<WindowRef> refs, std::size_t cap, std::uint64_t seed) {
  if (refs.size() <= cap) return refs;
  std::vector<std::size_t> idx(refs.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<WindowRef> out;
  out.reserve(cap);
  for (std::size_t i : idx) out.push_back(refs[i]);
  return out;
}

std::vector<Matrix> materialise(std::span<const WindowRef> refs, std::size_t length, const ChannelStats& stats) {
  std::vector<Matrix> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(window_at(*r.py, r.row_begin, length, stats));
  return out;
}

Matrix flatten(std::span<const Matrix> windows) {
  if (windows.empty()) return {};
  const std::size_t width = windows.front().size();
  Matrix out(windows.size(), width);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    std::copy(windows[i].data.begin(), windows[i].data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

std::string to_string(Scenario s) { return s == Scenario::Individualized ? "individualized" : "mixed"; }

Scenario scenario_from_string(const std::string& s) {
  if (s == "individualized") return Scenario::Individualized;
  if (s == "mixed") return Scenario::Mixed;
  throw Error(ErrorCode::InvalidConfig, "unknown scenario '" + s + "' (expected individualized or mixed)");
}

std::vector<WindowSample> enumerate_windows(const CohortDataset& data, std::size_t window, int horizon,
                                            std::size_t stride) {
  if (window < 1) throw Error(ErrorCode::InvalidConfig, "window must be >= 1 hour");
  if (horizon < 1) throw Error(ErrorCode::InvalidConfig, "horizon must be >= 1 hour");
  if (stride < 1) throw Error(ErrorCode::InvalidConfig, "window stride must be >= 1");
  std::vector<WindowSample> out;
  for (const auto& [id, years] : data.patients) {
    for (const auto& [year, py] : years) {
      for (const auto& [b, e] : py.grid.visit_ranges()) {
        for (std::size_t r = b; r + window <= e; r += stride) {
          const Hour end = py.grid.hours[r + window - 1];
          const auto obs = raw_pain_obs(py, end + horizon);
          if (!obs) continue;
          WindowSample s;
          s.patient_id = id;
          s.year = year;
          s.row_begin = r;
          s.end_hour = end;
          s.horizon = horizon;
          s.target = (*obs)->score;
          s.target_timestamp = (*obs)->timestamp;
          out.push_back(std::move(s));
        }
      }
    }
  }
  return out;
}

Matrix window_at(const PatientYear& py, std::size_t row_begin, std::size_t window, const ChannelStats& stats) {
  if (row_begin + window > py.grid.rows()) throw Error(ErrorCode::ShapeMismatch, "window runs past the grid");
  Matrix m(window, kWindowFeatures);
  for (Channel c : kAllChannels) {
    const std::size_t ci = index_of(c);
    // Interpolated cells after the last observation were filled from values
    // beyond the window end.
    std::size_t usable = 0;
    for (std::size_t t = window; t > 0; --t) {
      if (py.grid.state(row_begin + t - 1, c) == CellState::Observed) {
        usable = t;
        break;
      }
    }
    for (std::size_t t = 0; t < usable; ++t) {
      const std::size_t row = row_begin + t;
      if (!py.grid.present(row, c)) continue;
      m(t, ci) = (py.grid.value(row, c) - stats.mean[ci]) / stats.sd[ci];
      m(t, kChannelCount + ci) = 1.0;
    }
  }
  return m;
}

Matrix window_matrix(const CohortDataset& data, const WindowSample& s, std::size_t window, const ChannelStats& stats) {
  const PatientYear* py = data.find(s.patient_id, s.year);
  if (py == nullptr) throw Error(ErrorCode::ShapeMismatch, "window refers to a missing patient-year");
  return window_at(*py, s.row_begin, window, stats);
}

ChannelStats stats_until(const CohortDataset& data, const std::map<std::string, Hour>& cutoff) {
  std::array<double, kChannelCount> sum{}, sq{};
  std::array<std::size_t, kChannelCount> n{};
  for (const auto& [id, years] : data.patients) {
    const auto it = cutoff.find(id);
    if (it == cutoff.end()) continue;
    for (const auto& [year, py] : years) {
      for (std::size_t r = 0; r < py.grid.rows() && py.grid.hours[r] <= it->second; ++r) {
        for (Channel c : kAllChannels) {
          if (!py.grid.present(r, c)) continue;
          const double v = py.grid.value(r, c);
          const std::size_t ci = index_of(c);
          sum[ci] += v;
          sq[ci] += v * v;
          ++n[ci];
        }
      }
    }
  }
  ChannelStats s;
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    if (n[c] == 0) {
      s.mean[c] = 0.0;
      s.sd[c] = 1.0;
      continue;
    }
    const double m = sum[c] / static_cast<double>(n[c]);
    const double var = std::max(0.0, sq[c] / static_cast<double>(n[c]) - m * m);
    s.mean[c] = m;
    s.sd[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return s;
}

std::vector<std::string> draw_test_patients(std::vector<std::string> patients, double fraction, std::uint64_t seed) {
  std::sort(patients.begin(), patients.end());
  if (patients.empty()) return patients;
  Rng rng(seed);
  rng.shuffle(patients);
  const auto count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(patients.size()))), 1, patients.size());
  patients.resize(count);
  std::sort(patients.begin(), patients.end());
  return patients;
}

ScenarioSplit build_windows(std::span<const WindowSample> samples, Scenario scenario, const SplitConfig& cfg,
                            std::uint64_t seed) {
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "train_fraction must lie in (0, 1)");
  }
  std::map<std::string, std::vector<WindowSample>> by_patient;
  for (const auto& s : samples) by_patient[s.patient_id].push_back(s);

  ScenarioSplit out;
  out.scenario = scenario;
  std::vector<std::string> eligible;
  for (auto& [id, list] : by_patient) {
    std::stable_sort(list.begin(), list.end(), [](const WindowSample& a, const WindowSample& b) {
      return a.end_hour < b.end_hour;
    });
    if (list.size() < 2) {
      out.skipped.push_back(id);
    } else {
      eligible.push_back(id);
    }
  }
  auto cut_of = [&](std::size_t n) {
    const auto raw = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(n)));
    return std::clamp<std::size_t>(raw, 1, n - 1);
  };

  if (scenario == Scenario::Individualized) {
    for (const auto& id : eligible) {
      const auto& list = by_patient[id];
      const std::size_t cut = cut_of(list.size());
      Group g;
      g.name = id;
      g.train.assign(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(cut));
      g.test.assign(list.begin() + static_cast<std::ptrdiff_t>(cut), list.end());
      out.train_cutoff[id] = g.train.back().end_hour;
      out.groups.push_back(std::move(g));
    }
    return out;
  }

  if (!(cfg.mixed_test_fraction > 0.0 && cfg.mixed_test_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "mixed_test_fraction must lie in (0, 1]");
  }
  const std::vector<std::string> drawn = draw_test_patients(eligible, cfg.mixed_test_fraction, seed);
  const std::set<std::string> drawn_set(drawn.begin(), drawn.end());
  Group g;
  g.name = "pooled";
  for (const auto& id : eligible) {
    const auto& list = by_patient[id];
    const std::size_t cut = cut_of(list.size());
    const bool is_test = drawn_set.count(id) > 0;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (is_test && i >= cut) {
        g.test.push_back(list[i]);
      } else {
        g.train.push_back(list[i]);
      }
    }
    out.train_cutoff[id] = is_test ? list[cut - 1].end_hour : list.back().end_hour;
  }
  out.groups.push_back(std::move(g));
  return out;
}

// ---------------------------------------------------------------------------
// Configs

void ShortTermConfig::validate() const {
  if (window < 1) throw Error(ErrorCode::InvalidConfig, "window must be >= 1 hour");
  if (horizons.empty()) throw Error(ErrorCode::InvalidConfig, "at least one horizon is required");
  for (int h : horizons) {
    if (h < 1) throw Error(ErrorCode::InvalidConfig, "horizons must be >= 1 hour");
  }
  if (runs < 1) throw Error(ErrorCode::InvalidConfig, "runs must be >= 1");
  if (stride < 1 || pretrain_stride < 1) throw Error(ErrorCode::InvalidConfig, "strides must be >= 1");
  if (scenarios.empty()) throw Error(ErrorCode::InvalidConfig, "at least one scenario is required");
  static const std::set<std::string> known{"rf", "arima", "mlp", "lstm", "cpc-rf", "vae-rf"};
  if (models.empty()) throw Error(ErrorCode::InvalidConfig, "at least one model is required");
  for (const auto& m : models) {
    if (known.count(m) == 0) {
      throw Error(ErrorCode::InvalidConfig, "unknown short-term model '" + m + "' (rf, arima, mlp, lstm, cpc-rf, vae-rf)");
    }
  }
  forest.validate();
  mlp_train.validate();
  lstm_train.validate();
  cpc.validate();
  cpc_train.validate();
  vae.validate();
  vae_train.validate();
  if (lstm_hidden < 1) throw Error(ErrorCode::InvalidConfig, "lstm_hidden must be >= 1");
}

nlohmann::json to_json(const ShortTermConfig& c) {
  nlohmann::json scen = nlohmann::json::array();
  for (auto s : c.scenarios) scen.push_back(to_string(s));
  return {{"window", c.window},
          {"horizons", c.horizons},
          {"models", c.models},
          {"scenarios", scen},
          {"runs", c.runs},
          {"stride", c.stride},
          {"train_fraction", c.split.train_fraction},
          {"mixed_test_fraction", c.split.mixed_test_fraction},
          {"seed", c.seed},
          {"forest", forest::to_json(c.forest)},
          {"mlp_hidden", c.mlp_hidden},
          {"mlp_train", train_json(c.mlp_train)},
          {"lstm_hidden", c.lstm_hidden},
          {"lstm_train", train_json(c.lstm_train)},
          {"cpc", nn::to_json(c.cpc)},
          {"cpc_train", train_json(c.cpc_train)},
          {"cpc_window", c.cpc_window},
          {"pretrain_stride", c.pretrain_stride},
          {"max_pretrain_windows", c.max_pretrain_windows},
          {"vae", nn::to_json(c.vae)},
          {"vae_train", train_json(c.vae_train)},
          {"arima", arima_json(c.arima)}};
}

ShortTermConfig short_term_config_from_json(const nlohmann::json& j) {
  ShortTermConfig c;
  read_if(j, "window", c.window);
  read_if(j, "horizons", c.horizons);
  read_if(j, "models", c.models);
  if (j.contains("scenarios")) {
    c.scenarios.clear();
    for (const auto& s : j.at("scenarios")) c.scenarios.push_back(scenario_from_string(s.get<std::string>()));
  }
  read_if(j, "runs", c.runs);
  read_if(j, "stride", c.stride);
  read_if(j, "train_fraction", c.split.train_fraction);
  read_if(j, "mixed_test_fraction", c.split.mixed_test_fraction);
  read_if(j, "seed", c.seed);
  if (j.contains("forest")) c.forest = forest::forest_config_from_json(j.at("forest"));
  read_if(j, "mlp_hidden", c.mlp_hidden);
  if (j.contains("mlp_train")) c.mlp_train = train_from_json(j.at("mlp_train"), c.mlp_train);
  read_if(j, "lstm_hidden", c.lstm_hidden);
  if (j.contains("lstm_train")) c.lstm_train = train_from_json(j.at("lstm_train"), c.lstm_train);
  if (j.contains("cpc")) c.cpc = nn::cpc_config_from_json(j.at("cpc"));
  if (j.contains("cpc_train")) c.cpc_train = train_from_json(j.at("cpc_train"), c.cpc_train);
  read_if(j, "cpc_window", c.cpc_window);
  read_if(j, "pretrain_stride", c.pretrain_stride);
  read_if(j, "max_pretrain_windows", c.max_pretrain_windows);
  if (j.contains("vae")) c.vae = nn::vae_config_from_json(j.at("vae"));
  if (j.contains("vae_train")) c.vae_train = train_from_json(j.at("vae_train"), c.vae_train);
  if (j.contains("arima")) c.arima = arima_from_json(j.at("arima"), c.arima);
  c.validate();
  return c;
}

void LongTermConfig::validate() const {
  if (k < 2) throw Error(ErrorCode::InvalidConfig, "k must be >= 2");
  static const std::set<std::string> known{"mlp", "rf", "cpc-rf", "vae-rf"};
  if (models.empty()) throw Error(ErrorCode::InvalidConfig, "at least one model is required");
  for (const auto& m : models) {
    if (known.count(m) == 0) throw Error(ErrorCode::InvalidConfig, "unknown long-term model '" + m + "' (mlp, rf, cpc-rf, vae-rf)");
  }
  if (reduce.max_len < 1) throw Error(ErrorCode::InvalidConfig, "max_len must be >= 1");
  if (embed_stride < 1) throw Error(ErrorCode::InvalidConfig, "embed_stride must be >= 1");
  forest.validate();
  mlp_train.validate();
  cpc.validate();
  cpc_train.validate();
  vae.validate();
  vae_train.validate();
}

nlohmann::json to_json(const LongTermConfig& c) {
  return {{"k", c.k},
          {"max_len", c.reduce.max_len},
          {"include_pain", c.reduce.include_pain},
          {"fill_gaps", c.reduce.fill_gaps},
          {"kmeans", kmeans_json(c.kmeans)},
          {"models", c.models},
          {"seed", c.seed},
          {"forest", forest::to_json(c.forest)},
          {"mlp_hidden", c.mlp_hidden},
          {"mlp_train", train_json(c.mlp_train)},
          {"cpc", nn::to_json(c.cpc)},
          {"cpc_train", train_json(c.cpc_train)},
          {"cpc_window", c.cpc_window},
          {"vae", nn::to_json(c.vae)},
          {"vae_train", train_json(c.vae_train)},
          {"vae_window", c.vae_window},
          {"embed_stride", c.embed_stride},
          {"max_pretrain_windows", c.max_pretrain_windows}};
}

LongTermConfig long_term_config_from_json(const nlohmann::json& j) {
  LongTermConfig c;
  read_if(j, "k", c.k);
  read_if(j, "max_len", c.reduce.max_len);
  read_if(j, "include_pain", c.reduce.include_pain);
  read_if(j, "fill_gaps", c.reduce.fill_gaps);
  if (j.contains("kmeans")) c.kmeans = kmeans_from_json(j.at("kmeans"), c.kmeans);
  read_if(j, "models", c.models);
  read_if(j, "seed", c.seed);
  if (j.contains("forest")) c.forest = forest::forest_config_from_json(j.at("forest"));
  read_if(j, "mlp_hidden", c.mlp_hidden);
  if (j.contains("mlp_train")) c.mlp_train = train_from_json(j.at("mlp_train"), c.mlp_train);
  if (j.contains("cpc")) c.cpc = nn::cpc_config_from_json(j.at("cpc"));
  if (j.contains("cpc_train")) c.cpc_train = train_from_json(j.at("cpc_train"), c.cpc_train);
  read_if(j, "cpc_window", c.cpc_window);
  if (j.contains("vae")) c.vae = nn::vae_config_from_json(j.at("vae"));
  if (j.contains("vae_train")) c.vae_train = train_from_json(j.at("vae_train"), c.vae_train);
  read_if(j, "vae_window", c.vae_window);
  read_if(j, "embed_stride", c.embed_stride);
  read_if(j, "max_pretrain_windows", c.max_pretrain_windows);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Short-term experiment

namespace {

enum ModelKind { kRf, kArima, kMlp, kLstm, kCpcRf, kVaeRf };

ModelKind model_kind(const std::string& name) {
  if (name == "rf") return kRf;
  if (name == "arima") return kArima;
  if (name == "mlp") return kMlp;
  if (name == "lstm") return kLstm;
  if (name == "cpc-rf") return kCpcRf;
  return kVaeRf;
}

struct GroupData {
  std::vector<Matrix> train_windows;
  std::vector<Matrix> test_windows;
  Matrix train_flat;
  Matrix test_flat;
  std::vector<double> y_train;
  std::vector<double> y_test;
  Matrix cpc_train, cpc_test;
  Matrix vae_train, vae_test;
};

struct Fitted {
  std::vector<double> train_pred;
  std::vector<double> test_pred;
};

Fitted fit_forest(const Matrix& xtr, std::span<const double> ytr, const Matrix& xte, forest::ForestConfig cfg,
                  std::uint64_t seed) {
  cfg.seed = seed;
  const forest::Forest f = forest::rf_fit_regress(xtr, ytr, cfg);
  return {forest::rf_predict_regress(f, xtr), xte.rows > 0 ? forest::rf_predict_regress(f, xte) : std::vector<double>{}};
}

std::pair<double, double> target_scaling(std::span<const double> y) {
  const double m = mean_of(y);
  double s = 0.0;
  for (double v : y) s += (v - m) * (v - m);
  s = y.size() > 1 ? std::sqrt(s / static_cast<double>(y.size())) : 0.0;
  return {m, s > 1e-9 ? s : 1.0};
}

Fitted fit_model(ModelKind kind, const GroupData& g, const ShortTermConfig& cfg, std::uint64_t seed) {
  switch (kind) {
    case kRf:
      return fit_forest(g.train_flat, g.y_train, g.test_flat, cfg.forest, seed);
    case kCpcRf:
      return fit_forest(g.cpc_train, g.y_train, g.cpc_test, cfg.forest, seed);
    case kVaeRf:
      return fit_forest(g.vae_train, g.y_train, g.vae_test, cfg.forest, seed);
    case kMlp: {
      const auto [m, s] = target_scaling(g.y_train);
      std::vector<double> ys(g.y_train.size());
      for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = (g.y_train[i] - m) / s;
      std::vector<std::size_t> sizes{g.train_flat.cols};
      sizes.insert(sizes.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
      sizes.push_back(1);
      nn::MlpRegressor net(sizes, derive_seed(seed, {1}));
      nn::TrainConfig tc = cfg.mlp_train;
      tc.seed = derive_seed(seed, {2});
      nn::mlp_train(net, g.train_flat, ys, tc);
      Fitted f;
      f.train_pred = net.predict(g.train_flat).data;
      if (g.test_flat.rows > 0) f.test_pred = net.predict(g.test_flat).data;
      for (double& v : f.train_pred) v = v * s + m;
      for (double& v : f.test_pred) v = v * s + m;
      return f;
    }
    case kLstm: {
      const auto [m, s] = target_scaling(g.y_train);
      std::vector<double> ys(g.y_train.size());
      for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = (g.y_train[i] - m) / s;
      nn::RnnRegressor net(kWindowFeatures, cfg.lstm_hidden, 1, nn::CellKind::Lstm, derive_seed(seed, {1}));
      nn::TrainConfig tc = cfg.lstm_train;
      tc.seed = derive_seed(seed, {2});
      nn::rnn_train(net, g.train_windows, ys, tc);
      Fitted f;
      f.train_pred = net.predict(g.train_windows);
      f.test_pred = net.predict(g.test_windows);
      for (double& v : f.train_pred) v = v * s + m;
      for (double& v : f.test_pred) v = v * s + m;
      return f;
    }
    case kArima:
      break;
  }
  throw Error(ErrorCode::InvalidConfig, "model has no generic fit path");
}

// Present interpolated pain of one patient in time order.
struct PainSeries {
  std::vector<Hour> hours;
  std::vector<double> values;
  std::vector<std::uint8_t> observed;

  // Prefix known at hour h: trailing interpolated values depend on later data.
  std::size_t count_until(Hour h) const {
    auto n = static_cast<std::size_t>(std::upper_bound(hours.begin(), hours.end(), h) - hours.begin());
    while (n > 0 && !observed[n - 1]) --n;
    return n;
  }
};

PainSeries pain_series(const CohortDataset& data, const std::string& id) {
  PainSeries s;
  const auto it = data.patients.find(id);
  if (it == data.patients.end()) return s;
  for (const auto& [year, py] : it->second) {
    for (std::size_t r = 0; r < py.grid.rows(); ++r) {
      if (!py.grid.present(r, Channel::Pain)) continue;
      s.hours.push_back(py.grid.hours[r]);
      s.values.push_back(py.grid.value(r, Channel::Pain));
      s.observed.push_back(py.grid.state(r, Channel::Pain) == CellState::Observed ? 1 : 0);
    }
  }
  return s;
}

struct ArimaOutcome {
  std::vector<double> test_pred;  // pooled in group/test order
  double train_objective = 0.0;
  std::size_t fallbacks = 0;
  std::size_t patients = 0;
};

ArimaOutcome run_arima(const CohortDataset& data, const ScenarioSplit& split, const ShortTermConfig& cfg) {
  // One fit per test patient on the pain it could see before its cutoff.
  std::vector<std::string> patients;
  for (const auto& g : split.groups) {
    for (const auto& s : g.test) {
      if (patients.empty() || patients.back() != s.patient_id) patients.push_back(s.patient_id);
    }
  }
  std::sort(patients.begin(), patients.end());
  patients.erase(std::unique(patients.begin(), patients.end()), patients.end());

  std::vector<PainSeries> series(patients.size());
  std::vector<std::optional<stats::ArimaModel>> models(patients.size());
  parallel_for(patients.size(), [&](std::size_t i) {
    series[i] = pain_series(data, patients[i]);
    const Hour cutoff = split.train_cutoff.at(patients[i]);
    const std::size_t n = series[i].count_until(cutoff);
    try {
      models[i] = stats::arima_grid_search(std::span<const double>(series[i].values.data(), n), cfg.arima).best;
    } catch (const Error&) {
      models[i].reset();
    }
  });

  ArimaOutcome out;
  out.patients = patients.size();
  double sse = 0.0;
  std::size_t n_res = 0;
  for (const auto& m : models) {
    if (!m) {
      ++out.fallbacks;
      continue;
    }
    sse += m->sse;
    n_res += m->n_eff;
  }
  out.train_objective = n_res > 0 ? sse / static_cast<double>(n_res) : 0.0;

  for (const auto& g : split.groups) {
    double fallback_mean = 0.0;
    for (const auto& s : g.train) fallback_mean += s.target;
    fallback_mean /= static_cast<double>(std::max<std::size_t>(1, g.train.size()));
    for (const auto& s : g.test) {
      const auto idx = static_cast<std::size_t>(std::lower_bound(patients.begin(), patients.end(), s.patient_id) -
                                                patients.begin());
      const PainSeries& ps = series[idx];
      const std::size_t n = ps.count_until(s.end_hour);
      double pred = fallback_mean;
      if (n > 0) pred = ps.values[n - 1];
      if (models[idx] && n > static_cast<std::size_t>(models[idx]->d)) {
        const auto f = stats::arima_forecast(*models[idx], std::span<const double>(ps.values.data(), n),
                                             static_cast<std::size_t>(s.horizon));
        pred = f.back();
      }
      out.test_pred.push_back(pred);
    }
  }
  return out;
}

}  // namespace

const ShortTermCell* ShortTermReport::find(Scenario s, const std::string& model, int horizon) const {
  for (const auto& c : cells) {
    if (c.scenario == s && c.model == model && c.horizon == horizon) return &c;
  }
  return nullptr;
}

ShortTermReport run_short_term(const CohortDataset& data, const ShortTermConfig& cfg) {
  cfg.validate();
  if (data.n_patients() == 0) throw Error(ErrorCode::EmptyTrainingSet, "cohort is empty");
  ShortTermReport report;
  report.config = to_json(cfg);
  report.fingerprint = fingerprint(data);

  std::vector<std::vector<WindowSample>> samples_by_h;
  std::size_t total = 0;
  for (int h : cfg.horizons) {
    samples_by_h.push_back(enumerate_windows(data, cfg.window, h, cfg.stride));
    total += samples_by_h.back().size();
  }
  if (total == 0) {
    throw Error(ErrorCode::EmptyTrainingSet, "no window of " + std::to_string(cfg.window) +
                                                 " hours has a raw pain target at any horizon");
  }

  for (Scenario scenario : cfg.scenarios) {
    const auto sc = static_cast<std::uint64_t>(scenario);
    std::vector<ScenarioSplit> splits;
    for (std::size_t hi = 0; hi < cfg.horizons.size(); ++hi) {
      splits.push_back(build_windows(samples_by_h[hi], scenario, cfg.split, derive_seed(cfg.seed, {sc, 0x5EED})));
      if (!splits.back().skipped.empty()) {
        report.notes.push_back(to_string(scenario) + " h=" + std::to_string(cfg.horizons[hi]) + ": " +
                               std::to_string(splits.back().skipped.size()) +
                               " patient(s) skipped with fewer than 2 samples");
      }
    }
    // Cutoff valid for every horizon: pretraining never reads a test period.
    std::map<std::string, Hour> cutoff;
    for (const auto& sp : splits) {
      for (const auto& [id, h] : sp.train_cutoff) {
        auto [it, inserted] = cutoff.emplace(id, h);
        if (!inserted) it->second = std::min(it->second, h);
      }
    }
    const ChannelStats stats = stats_until(data, cutoff);

    const bool want_cpc = std::count(cfg.models.begin(), cfg.models.end(), "cpc-rf") > 0;
    const bool want_vae = std::count(cfg.models.begin(), cfg.models.end(), "vae-rf") > 0;
    std::optional<nn::Cpc> cpc;
    std::optional<nn::Vae> vae;
    std::string cpc_error, vae_error;
    if (want_cpc) {
      try {
        const auto refs = subsample(windows_until(data, cutoff, cfg.cpc_window, cfg.pretrain_stride),
                                    cfg.max_pretrain_windows, derive_seed(cfg.seed, {sc, 0xC0C}));
        const auto windows = materialise(refs, cfg.cpc_window, stats);
        nn::Cpc model(kWindowFeatures, cfg.cpc, derive_seed(cfg.seed, {sc, 0xC0C, 1}));
        nn::TrainConfig tc = cfg.cpc_train;
        tc.seed = derive_seed(cfg.seed, {sc, 0xC0C, 2});
        const auto trace = nn::cpc_pretrain(model, windows, tc);
        report.notes.push_back(to_string(scenario) + ": CPC pretrained on " + std::to_string(windows.size()) +
                               " windows, InfoNCE " + csv::format_double(trace.loss.front()) + " -> " +
                               csv::format_double(trace.loss.back()));
        cpc = std::move(model);
      } catch (const Error& e) {
        cpc_error = e.what();
      }
    }
    if (want_vae) {
      try {
        const auto refs = subsample(windows_until(data, cutoff, cfg.window, cfg.pretrain_stride),
                                    cfg.max_pretrain_windows, derive_seed(cfg.seed, {sc, 0xAE}));
        const auto windows = materialise(refs, cfg.window, stats);
        nn::Vae model(kWindowFeatures, cfg.vae, derive_seed(cfg.seed, {sc, 0xAE, 1}));
        nn::TrainConfig tc = cfg.vae_train;
        tc.seed = derive_seed(cfg.seed, {sc, 0xAE, 2});
        const auto trace = nn::vae_train(model, windows, tc);
        report.notes.push_back(to_string(scenario) + ": VAE trained on " + std::to_string(windows.size()) +
                               " windows, loss " + csv::format_double(trace.loss.front()) + " -> " +
                               csv::format_double(trace.loss.back()));
        vae = std::move(model);
      } catch (const Error& e) {
        vae_error = e.what();
      }
    }

    for (std::size_t hi = 0; hi < cfg.horizons.size(); ++hi) {
      const int h = cfg.horizons[hi];
      const ScenarioSplit& split = splits[hi];
      std::vector<GroupData> groups(split.groups.size());
      std::size_t n_train = 0;
      std::size_t n_test = 0;
      std::vector<double> truth;
      for (std::size_t gi = 0; gi < split.groups.size(); ++gi) {
        const Group& g = split.groups[gi];
        GroupData& d = groups[gi];
        for (const auto& s : g.train) {
          d.train_windows.push_back(window_matrix(data, s, cfg.window, stats));
          d.y_train.push_back(s.target);
        }
        for (const auto& s : g.test) {
          d.test_windows.push_back(window_matrix(data, s, cfg.window, stats));
          d.y_test.push_back(s.target);
        }
        d.train_flat = flatten(d.train_windows);
        d.test_flat = flatten(d.test_windows);
        if (d.test_flat.rows == 0) d.test_flat = Matrix(0, d.train_flat.cols);
        if (cpc) {
          d.cpc_train = cpc->embed_batch(d.train_windows);
          d.cpc_test = cpc->embed_batch(d.test_windows);
        }
        if (vae) {
          d.vae_train = vae->embed_batch(d.train_windows);
          d.vae_test = vae->embed_batch(d.test_windows);
        }
        n_train += g.train.size();
        n_test += g.test.size();
        truth.insert(truth.end(), d.y_test.begin(), d.y_test.end());
      }

      for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
        const std::string& name = cfg.models[mi];
        const ModelKind kind = model_kind(name);
        ShortTermCell cell;
        cell.scenario = scenario;
        cell.model = name;
        cell.horizon = h;
        cell.n_train = n_train;
        cell.n_test = n_test;
        try {
          if (n_test == 0 || n_train == 0) throw Error(ErrorCode::EmptyTrainingSet, "split has no train or test samples");
          if (kind == kCpcRf && !cpc) throw Error(ErrorCode::NonFiniteLoss, "CPC pretraining failed: " + cpc_error);
          if (kind == kVaeRf && !vae) throw Error(ErrorCode::NonFiniteLoss, "VAE pretraining failed: " + vae_error);

          struct RunOut {
            double objective = 0.0;
            std::vector<double> test_pred;
            std::vector<double> group_mae;
          };
          std::vector<RunOut> runs;
          if (kind == kArima) {
            ArimaOutcome a = run_arima(data, split, cfg);
            if (a.fallbacks > 0) {
              report.notes.push_back(to_string(scenario) + " h=" + std::to_string(h) + ": ARIMA fell back to persistence for " +
                                     std::to_string(a.fallbacks) + " of " + std::to_string(a.patients) + " patient(s)");
            }
            RunOut r;
            r.objective = a.train_objective;
            r.test_pred = std::move(a.test_pred);
            std::size_t off = 0;
            for (const auto& d : groups) {
              const std::span<const double> p(r.test_pred.data() + off, d.y_test.size());
              if (!d.y_test.empty()) r.group_mae.push_back(eval::mae(p, d.y_test));
              off += d.y_test.size();
            }
            runs.push_back(std::move(r));
          } else {
            runs.resize(cfg.runs);
            parallel_for(cfg.runs, [&](std::size_t run) {
              const std::uint64_t seed = derive_seed(cfg.seed, {sc, static_cast<std::uint64_t>(h), mi, run});
              RunOut r;
              double sse = 0.0;
              std::size_t count = 0;
              for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                const GroupData& d = groups[gi];
                const Fitted f = fit_model(kind, d, cfg, derive_seed(seed, {gi}));
                for (std::size_t i = 0; i < d.y_train.size(); ++i) {
                  sse += (f.train_pred[i] - d.y_train[i]) * (f.train_pred[i] - d.y_train[i]);
                }
                count += d.y_train.size();
                r.test_pred.insert(r.test_pred.end(), f.test_pred.begin(), f.test_pred.end());
                if (!d.y_test.empty()) r.group_mae.push_back(eval::mae(f.test_pred, d.y_test));
              }
              r.objective = sse / static_cast<double>(count);
              runs[run] = std::move(r);
            });
          }

          std::vector<double> maes;
          for (std::size_t run = 0; run < runs.size(); ++run) {
            RunRecord rec;
            rec.scenario = scenario;
            rec.model = name;
            rec.horizon = h;
            rec.run = run;
            rec.seed = derive_seed(cfg.seed, {sc, static_cast<std::uint64_t>(h), mi, run});
            rec.train_objective = runs[run].objective;
            rec.test_mae = eval::mae(runs[run].test_pred, truth);
            rec.test_r2 = safe_r2(runs[run].test_pred, truth);
            maes.push_back(rec.test_mae);
            report.runs.push_back(rec);
          }
          std::size_t best = 0;
          for (std::size_t run = 1; run < runs.size(); ++run) {
            if (runs[run].objective < runs[best].objective) best = run;
          }
          cell.ok = true;
          cell.runs = runs.size();
          cell.selected_run = best;
          cell.selected_mae = maes[best];
          cell.selected_r2 = safe_r2(runs[best].test_pred, truth);
          cell.mae_mean = mean_of(maes);
          cell.mae_std = sample_std(maes);
          if (scenario == Scenario::Individualized) cell.per_patient_mae = mean_of(runs[best].group_mae);
        } catch (const Error& e) {
          cell.ok = false;
          cell.error = e.what();
        }
        report.cells.push_back(std::move(cell));
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Long-term experiment

namespace {

constexpr std::size_t kSummaryWidth = 3 * kChannelCount + 1;

struct YearSummary {
  std::array<double, kSummaryWidth> values{};
};

YearSummary summarise(const PatientYear& py, const ChannelStats& stats) {
  YearSummary s;
  const std::size_t rows = py.grid.rows();
  for (Channel c : kAllChannels) {
    const std::size_t ci = index_of(c);
    double sum = 0.0;
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (!py.grid.present(r, c)) continue;
      const double v = (py.grid.value(r, c) - stats.mean[ci]) / stats.sd[ci];
      sum += v;
      sq += v * v;
      ++n;
    }
    if (n == 0) continue;
    const double m = sum / static_cast<double>(n);
    s.values[3 * ci] = m;
    s.values[3 * ci + 1] = std::sqrt(std::max(0.0, sq / static_cast<double>(n) - m * m));
    s.values[3 * ci + 2] = static_cast<double>(n) / static_cast<double>(rows);
  }
  return s;
}

// Mean embedding over windows of one patient-year, zeros when none fits.
template <typename Model>
std::vector<double> year_embedding(Model& model, const PatientYear& py, std::size_t length, std::size_t stride,
                                   const ChannelStats& stats, std::size_t dim) {
  std::vector<Matrix> windows;
  for (const auto& [b, e] : py.grid.visit_ranges()) {
    for (std::size_t r = b; r + length <= e; r += stride) windows.push_back(window_at(py, r, length, stats));
  }
  std::vector<double> out(dim, 0.0);
  if (windows.empty()) return out;
  const Matrix emb = model.embed_batch(windows);
  for (std::size_t i = 0; i < emb.rows; ++i) {
    for (std::size_t c = 0; c < dim; ++c) out[c] += emb(i, c);
  }
  for (double& v : out) v /= static_cast<double>(emb.rows);
  return out;
}

std::vector<WindowRef> windows_before_year(const CohortDataset& data, int year, std::size_t length,
                                           std::size_t stride) {
  std::vector<WindowRef> out;
  for (const auto& [id, years] : data.patients) {
    for (const auto& [y, py] : years) {
      if (y >= year) continue;
      for (const auto& [b, e] : py.grid.visit_ranges()) {
        for (std::size_t r = b; r + length <= e; r += stride) out.push_back({&py, r});
      }
    }
  }
  return out;
}

}  // namespace

const LongTermCell* LongTermReport::find(const std::string& model, int year) const {
  for (const auto& c : cells) {
    if (c.model == model && c.test_year == year) return &c;
  }
  return nullptr;
}

LongTermReport run_long_term(const CohortDataset& data, const LongTermConfig& cfg) {
  cfg.validate();
  const int n_years = data.n_years();
  if (n_years < 2) {
    throw Error(ErrorCode::InsufficientYears, "long-term forecasting needs at least 2 years (got " +
                                                  std::to_string(n_years) + ")");
  }
  LongTermReport report;
  report.config = to_json(cfg);
  report.fingerprint = fingerprint(data);
  const ChannelStats stats = channel_stats(data);
  const std::size_t k = cfg.k;

  // (1) clustering per year, aligned to the previous year.
  std::map<std::string, std::map<int, int>> labels;
  for (int y = 1; y <= n_years; ++y) {
    std::vector<std::string> ids;
    std::vector<dtw::Sequence> series;
    for (const auto& [id, years] : data.patients) {
      const auto it = years.find(y);
      if (it == years.end()) continue;
      try {
        series.push_back(cluster::reduce_series(it->second.grid, stats, cfg.reduce));
        ids.push_back(id);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptySequence) throw;
        report.notes.push_back("year " + std::to_string(y) + ": " + id + " has no present cells, not clustered");
      }
    }
    cluster::KMeansOptions opts = cfg.kmeans;
    opts.k = k;
    opts.seed = derive_seed(cfg.seed, {0xC1u, static_cast<std::uint64_t>(y)});
    YearClustering yc;
    yc.year = y;
    yc.model = cluster::kmeans_dtw(series, opts);
    yc.model.year = y;
    yc.model.ids = ids;
    if (!report.years.empty()) {
      const cluster::Alignment a = cluster::align_labels(report.years.back().model, yc.model);
      yc.model = cluster::relabel(yc.model, a.permutation);
      yc.alignment_cost = a.cost;
    }
    for (std::size_t i = 0; i < ids.size(); ++i) labels[ids[i]][y] = yc.model.labels[i];
    report.years.push_back(std::move(yc));
  }

  std::map<std::string, std::map<int, YearSummary>> summaries;
  for (const auto& [id, years] : data.patients) {
    for (const auto& [y, py] : years) summaries[id][y] = summarise(py, stats);
  }
  std::vector<std::string> patient_ids;
  for (const auto& [id, years] : data.patients) patient_ids.push_back(id);

  auto label_of = [&](const std::string& id, int y) -> int {
    const auto it = labels.find(id);
    if (it == labels.end()) return -1;
    const auto jt = it->second.find(y);
    return jt == it->second.end() ? -1 : jt->second;
  };

  // Base features describing history up to year s; labels hidden for the
  // year-2 fallback rows.
  auto base_row = [&](const std::string& id, int s, bool hide_labels) {
    std::vector<double> row;
    const auto& sm = summaries[id];
    const auto it = sm.find(s);
    if (it != sm.end()) {
      row.insert(row.end(), it->second.values.begin(), it->second.values.end() - 1);
      row.push_back(0.0);
    } else {
      row.insert(row.end(), kSummaryWidth - 1, 0.0);
      row.push_back(1.0);
    }
    std::vector<double> onehot(k + 1, 0.0);
    std::vector<double> hist(k + 1, 0.0);
    if (hide_labels) {
      onehot[k] = 1.0;
    } else {
      const int l = label_of(id, s);
      onehot[l < 0 ? k : static_cast<std::size_t>(l)] = 1.0;
      for (int y = 1; y <= s; ++y) {
        const int ly = label_of(id, y);
        hist[ly < 0 ? k : static_cast<std::size_t>(ly)] += 1.0 / static_cast<double>(s);
      }
    }
    row.insert(row.end(), onehot.begin(), onehot.end());
    row.insert(row.end(), hist.begin(), hist.end());
    return row;
  };

  for (int t = 2; t <= n_years; ++t) {
    struct Pair {
      std::string id;
      int s = 0;
      bool hide = false;
      int label = 0;
    };
    std::vector<Pair> train, test;
    if (t == 2) {
      for (const auto& id : patient_ids) {
        const int l = label_of(id, 1);
        if (l >= 0) train.push_back({id, 1, true, l});
      }
    } else {
      for (int s = 1; s + 1 <= t - 1; ++s) {
        for (const auto& id : patient_ids) {
          const int l = label_of(id, s + 1);
          if (l >= 0) train.push_back({id, s, false, l});
        }
      }
    }
    std::size_t excluded = 0;
    for (const auto& id : patient_ids) {
      const int l = label_of(id, t);
      if (l >= 0) {
        test.push_back({id, t - 1, false, l});
      } else {
        ++excluded;
      }
    }

    // Embedding models trained only on years before t.
    std::map<std::string, std::map<int, std::vector<double>>> cpc_emb, vae_emb;
    std::string cpc_error, vae_error;
    const bool want_cpc = std::count(cfg.models.begin(), cfg.models.end(), "cpc-rf") > 0;
    const bool want_vae = std::count(cfg.models.begin(), cfg.models.end(), "vae-rf") > 0;
    const auto ut = static_cast<std::uint64_t>(t);
    if (want_cpc) {
      try {
        const auto refs = subsample(windows_before_year(data, t, cfg.cpc_window, cfg.embed_stride),
                                    cfg.max_pretrain_windows, derive_seed(cfg.seed, {0xC0C, ut}));
        nn::Cpc model(kWindowFeatures, cfg.cpc, derive_seed(cfg.seed, {0xC0C, ut, 1}));
        nn::TrainConfig tc = cfg.cpc_train;
        tc.seed = derive_seed(cfg.seed, {0xC0C, ut, 2});
        nn::cpc_pretrain(model, materialise(refs, cfg.cpc_window, stats), tc);
        for (const auto& [id, years] : data.patients) {
          for (const auto& [y, py] : years) {
            if (y < t) cpc_emb[id][y] = year_embedding(model, py, cfg.cpc_window, cfg.embed_stride, stats, cfg.cpc.hidden);
          }
        }
      } catch (const Error& e) {
        cpc_error = e.what();
      }
    }
    if (want_vae) {
      try {
        const auto refs = subsample(windows_before_year(data, t, cfg.vae_window, cfg.embed_stride),
                                    cfg.max_pretrain_windows, derive_seed(cfg.seed, {0xAE, ut}));
        nn::Vae model(kWindowFeatures, cfg.vae, derive_seed(cfg.seed, {0xAE, ut, 1}));
        nn::TrainConfig tc = cfg.vae_train;
        tc.seed = derive_seed(cfg.seed, {0xAE, ut, 2});
        nn::vae_train(model, materialise(refs, cfg.vae_window, stats), tc);
        for (const auto& [id, years] : data.patients) {
          for (const auto& [y, py] : years) {
            if (y < t) vae_emb[id][y] = year_embedding(model, py, cfg.vae_window, cfg.embed_stride, stats, cfg.vae.latent);
          }
        }
      } catch (const Error& e) {
        vae_error = e.what();
      }
    }

    for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
      const std::string& name = cfg.models[mi];
      LongTermCell cell;
      cell.model = name;
      cell.test_year = t;
      cell.n_train = train.size();
      cell.n_test = test.size();
      cell.excluded = excluded;
      try {
        if (name == "cpc-rf" && !cpc_error.empty()) throw Error(ErrorCode::NonFiniteLoss, "CPC pretraining failed: " + cpc_error);
        if (name == "vae-rf" && !vae_error.empty()) throw Error(ErrorCode::NonFiniteLoss, "VAE pretraining failed: " + vae_error);
        if (train.empty() || test.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no training or test patients");
        const std::size_t emb_dim = name == "cpc-rf" ? cfg.cpc.hidden : name == "vae-rf" ? cfg.vae.latent : 0;
        auto features = [&](const std::vector<Pair>& pairs) {
          std::vector<std::vector<double>> rows;
          for (const auto& p : pairs) {
            std::vector<double> row = base_row(p.id, p.s, p.hide);
            if (emb_dim > 0) {
              const auto& store = name == "cpc-rf" ? cpc_emb : vae_emb;
              std::vector<double> e(emb_dim, 0.0);
              const auto it = store.find(p.id);
              if (it != store.end()) {
                const auto jt = it->second.find(p.s);
                if (jt != it->second.end()) e = jt->second;
              }
              row.insert(row.end(), e.begin(), e.end());
            }
            rows.push_back(std::move(row));
          }
          Matrix m(rows.size(), rows.front().size());
          for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
          return m;
        };
        Matrix xtr = features(train);
        Matrix xte = features(test);
        std::vector<int> ytr, yte;
        for (const auto& p : train) ytr.push_back(p.label);
        for (const auto& p : test) yte.push_back(p.label);
        const std::uint64_t seed = derive_seed(cfg.seed, {0x17, ut, mi});
        Matrix scores;
        if (name == "mlp") {
          // Standardise with training statistics.
          for (std::size_t c = 0; c < xtr.cols; ++c) {
            double m = 0.0, sq = 0.0;
            for (std::size_t r = 0; r < xtr.rows; ++r) m += xtr(r, c);
            m /= static_cast<double>(xtr.rows);
            for (std::size_t r = 0; r < xtr.rows; ++r) sq += (xtr(r, c) - m) * (xtr(r, c) - m);
            const double sd = std::sqrt(sq / static_cast<double>(xtr.rows));
            const double scale = sd > 1e-9 ? sd : 1.0;
            for (std::size_t r = 0; r < xtr.rows; ++r) xtr(r, c) = (xtr(r, c) - m) / scale;
            for (std::size_t r = 0; r < xte.rows; ++r) xte(r, c) = (xte(r, c) - m) / scale;
          }
          std::vector<std::size_t> sizes{xtr.cols};
          sizes.insert(sizes.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
          sizes.push_back(k);
          nn::MlpRegressor net(sizes, derive_seed(seed, {1}));
          nn::TrainConfig tc = cfg.mlp_train;
          tc.seed = derive_seed(seed, {2});
          nn::mlp_train_classifier(net, xtr, ytr, tc);
          scores = nn::mlp_predict_proba(net, xte);
        } else {
          forest::ForestConfig fc = cfg.forest;
          fc.seed = seed;
          const forest::Forest f = forest::rf_fit_classify(xtr, ytr, fc, k);
          scores = forest::rf_scores(f, xte);
        }
        const eval::MacroAuroc a = eval::auroc_macro_detail(scores, yte);
        cell.ok = true;
        cell.auroc = a.value;
        cell.classes_skipped = a.classes_skipped;
      } catch (const Error& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      report.cells.push_back(std::move(cell));
    }
  }

  for (const auto& [id, years] : data.patients) {
    for (const auto& [y, py] : years) {
      TrajectoryRow row;
      row.patient_id = id;
      row.year = y;
      row.cluster = label_of(id, y);
      double pain = 0.0, sbp = 0.0;
      std::size_t np = 0, ns = 0;
      for (std::size_t r = 0; r < py.grid.rows(); ++r) {
        if (py.grid.present(r, Channel::Pain)) {
          pain += py.grid.value(r, Channel::Pain);
          ++np;
        }
        if (py.grid.present(r, Channel::SystolicBP)) {
          sbp += py.grid.value(r, Channel::SystolicBP);
          ++ns;
        }
      }
      row.mean_pain = np > 0 ? pain / static_cast<double>(np) : kNaN;
      row.pain_band = np > 0 ? cluster::pain_band(row.mean_pain) : -1;
      row.mean_systolic_bp = ns > 0 ? sbp / static_cast<double>(ns) : kNaN;
      report.trajectory.push_back(row);
    }
  }
  return report;
}

std::string fingerprint(const CohortDataset& data) {
  std::ostringstream os;
  write_grid_csv(os, data);
  write_raw_pain_csv(os, data);
  return hex64(hash_string(os.str()));
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const ShortTermReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json j{{"scenario", to_string(c.scenario)},
                     {"model", c.model},
                     {"horizon", c.horizon},
                     {"ok", c.ok},
                     {"n_train", c.n_train},
                     {"n_test", c.n_test}};
    if (c.ok) {
      j["runs"] = c.runs;
      j["selected_run"] = c.selected_run;
      j["selected_mae"] = c.selected_mae;
      j["selected_r2"] = opt_json(c.selected_r2);
      j["mae_mean"] = c.mae_mean;
      if (c.mae_std) j["mae_std"] = *c.mae_std;
      if (c.per_patient_mae) j["per_patient_mae"] = *c.per_patient_mae;
    } else {
      j["error"] = c.error;
    }
    cells.push_back(j);
  }
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"scenario", to_string(run.scenario)},
                    {"model", run.model},
                    {"horizon", run.horizon},
                    {"run", run.run},
                    {"seed", run.seed},
                    {"train_objective", run.train_objective},
                    {"test_mae", run.test_mae},
                    {"test_r2", opt_json(run.test_r2)}});
  }
  return {{"kind", "short-term"}, {"config", r.config}, {"fingerprint", r.fingerprint},
          {"cells", cells},       {"runs", runs},       {"notes", r.notes}};
}

nlohmann::json to_json(const LongTermReport& r) {
  nlohmann::json years = nlohmann::json::array();
  for (const auto& y : r.years) {
    nlohmann::json j{{"year", y.year}, {"inertia", y.model.inertia}, {"ids", y.model.ids}, {"labels", y.model.labels}};
    j["alignment_cost"] = opt_json(y.alignment_cost);
    years.push_back(j);
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json j{{"model", c.model}, {"test_year", c.test_year}, {"ok", c.ok},
                     {"n_train", c.n_train}, {"n_test", c.n_test}, {"excluded", c.excluded}};
    if (c.ok) {
      j["auroc"] = c.auroc;
      j["auroc_variant"] = std::string(eval::kAurocVariant);
      j["classes_skipped"] = c.classes_skipped;
    } else {
      j["error"] = c.error;
    }
    cells.push_back(j);
  }
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& t : r.trajectory) {
    traj.push_back({{"patient_id", t.patient_id},
                    {"year", t.year},
                    {"cluster", t.cluster},
                    {"mean_pain", std::isfinite(t.mean_pain) ? nlohmann::json(t.mean_pain) : nlohmann::json(nullptr)},
                    {"pain_band", t.pain_band},
                    {"mean_systolic_bp",
                     std::isfinite(t.mean_systolic_bp) ? nlohmann::json(t.mean_systolic_bp) : nlohmann::json(nullptr)}});
  }
  return {{"kind", "long-term"}, {"config", r.config}, {"fingerprint", r.fingerprint}, {"years", years},
          {"cells", cells},      {"trajectory", traj}, {"notes", r.notes}};
}

}  // namespace paincast::pipeline
