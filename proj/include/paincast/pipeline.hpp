#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "paincast/cluster.hpp"
#include "paincast/datamodel.hpp"
#include "paincast/forest.hpp"
#include "paincast/matrix.hpp"
#include "paincast/neural.hpp"
#include "paincast/stats.hpp"

namespace paincast::pipeline {

/// Input features per window hour: 7 z-scored channels (missing -> 0, the
/// training mean) followed by 7 presence bits.
inline constexpr std::size_t kWindowFeatures = 2 * kChannelCount;

enum class Scenario { Individualized, Mixed };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct WindowSample {
  std::string patient_id;
  int year = 0;
  std::size_t row_begin = 0;  // first grid row of the window
  Hour end_hour = 0;          // hour of the last window row
  int horizon = 0;
  int target = 0;             // raw pain at end_hour + horizon
  Minutes target_timestamp = 0;
};

/// Every run of `window` consecutive grid hours inside one visit (starting
/// every `stride` rows) whose end hour e has a raw pain observation snapped
/// to e + horizon. Ordered by patient, then time.
std::vector<WindowSample> enumerate_windows(const CohortDataset& data, std::size_t window, int horizon,
                                            std::size_t stride = 1);

/// window x kWindowFeatures matrix for the grid rows of one patient-year.
/// Per channel, interpolated cells after the last observed cell of the window
/// are treated as missing, since their values depend on later observations.
Matrix window_at(const PatientYear& py, std::size_t row_begin, std::size_t window, const ChannelStats& stats);
Matrix window_matrix(const CohortDataset& data, const WindowSample& s, std::size_t window, const ChannelStats& stats);

/// Channel statistics over present cells at or before each patient's cutoff
/// hour. Patients without a cutoff are ignored.
ChannelStats stats_until(const CohortDataset& data, const std::map<std::string, Hour>& cutoff);

struct SplitConfig {
  double train_fraction = 0.8;
  double mixed_test_fraction = 0.5;  // share of patients whose future is held out
};

struct Group {
  std::string name;  // patient id (individualized) or "pooled"
  std::vector<WindowSample> train;
  std::vector<WindowSample> test;
};

struct ScenarioSplit {
  Scenario scenario = Scenario::Mixed;
  std::vector<Group> groups;
  std::vector<std::string> skipped;  // patients with fewer than 2 samples
  /// Per patient: latest hour any training sample of that patient reads.
  std::map<std::string, Hour> train_cutoff;
};

/// Individualized: per patient, the first floor(train_fraction * n) samples
/// (at least 1, at most n - 1) train and the rest test; one group per patient.
/// Mixed: the same per-patient cut, then a seeded draw of patients whose
/// future samples form the pooled test set; other patients' future samples
/// join training. Patients with < 2 samples are skipped and listed.
ScenarioSplit build_windows(std::span<const WindowSample> samples, Scenario scenario, const SplitConfig& cfg,
                            std::uint64_t seed);

/// Patient ids drawn as mixed-scenario test patients (seeded, uniform).
std::vector<std::string> draw_test_patients(std::vector<std::string> patients, double fraction, std::uint64_t seed);

struct ShortTermConfig {
  std::size_t window = 24;
  std::vector<int> horizons{1, 2, 4};
  std::vector<std::string> models{"rf", "arima", "mlp", "lstm", "cpc-rf", "vae-rf"};
  std::vector<Scenario> scenarios{Scenario::Individualized, Scenario::Mixed};
  std::size_t runs = 40;
  std::size_t stride = 1;
  SplitConfig split;
  std::uint64_t seed = 1;

  forest::ForestConfig forest;
  std::vector<std::size_t> mlp_hidden{64, 32};
  nn::TrainConfig mlp_train;
  std::size_t lstm_hidden = 32;
  nn::TrainConfig lstm_train;

  nn::CpcConfig cpc;
  nn::TrainConfig cpc_train{128, 10, 1e-3, 1, std::nullopt};
  std::size_t cpc_window = 48;
  std::size_t pretrain_stride = 4;
  std::size_t max_pretrain_windows = 2048;
  nn::VaeConfig vae;
  nn::TrainConfig vae_train{20, 30, 1e-3, 1, std::nullopt};

  stats::GridSearchOptions arima;

  void validate() const;
};

nlohmann::json to_json(const ShortTermConfig& c);
/// Missing keys keep their defaults.
ShortTermConfig short_term_config_from_json(const nlohmann::json& j);

struct RunRecord {
  Scenario scenario = Scenario::Mixed;
  std::string model;
  int horizon = 0;
  std::size_t run = 0;
  std::uint64_t seed = 0;
  double train_objective = 0.0;  // training MSE
  double test_mae = 0.0;
  std::optional<double> test_r2;
};

struct ShortTermCell {
  Scenario scenario = Scenario::Mixed;
  std::string model;
  int horizon = 0;
  bool ok = false;
  std::string error;
  std::size_t runs = 0;
  std::size_t selected_run = 0;  // argmin training objective
  double selected_mae = 0.0;
  std::optional<double> selected_r2;
  double mae_mean = 0.0;
  std::optional<double> mae_std;               // absent when runs == 1
  std::optional<double> per_patient_mae;       // individualized: mean of per-patient MAE
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

struct ShortTermReport {
  nlohmann::json config;
  std::string fingerprint;
  std::vector<ShortTermCell> cells;
  std::vector<RunRecord> runs;
  std::vector<std::string> notes;

  const ShortTermCell* find(Scenario s, const std::string& model, int horizon) const;
};

/// Six forecasters x scenarios x horizons. Every model trains `runs` times
/// with derived seeds; the run with the lowest training objective is
/// reported. CPC and VAE are pretrained once per scenario on unlabeled
/// windows that end before every horizon's test period; a forest regression
/// head reads their embeddings. ARIMA is deterministic and runs once per patient. A failing
/// model produces a cell with ok = false. Throws EmptyTrainingSet when no
/// window qualifies.
ShortTermReport run_short_term(const CohortDataset& data, const ShortTermConfig& cfg);

struct LongTermConfig {
  std::size_t k = 7;
  cluster::ReduceOptions reduce;
  cluster::KMeansOptions kmeans;
  std::vector<std::string> models{"mlp", "cpc-rf", "vae-rf"};
  std::uint64_t seed = 1;

  forest::ForestConfig forest;
  std::vector<std::size_t> mlp_hidden{32};
  nn::TrainConfig mlp_train{32, 200, 1e-3, 1, std::nullopt};

  nn::CpcConfig cpc;
  nn::TrainConfig cpc_train{64, 5, 1e-3, 1, std::nullopt};
  std::size_t cpc_window = 48;
  nn::VaeConfig vae;
  nn::TrainConfig vae_train{20, 30, 1e-3, 1, std::nullopt};
  std::size_t vae_window = 24;
  std::size_t embed_stride = 12;
  std::size_t max_pretrain_windows = 1024;

  void validate() const;
};

nlohmann::json to_json(const LongTermConfig& c);
LongTermConfig long_term_config_from_json(const nlohmann::json& j);

struct YearClustering {
  int year = 0;
  cluster::ClusterModel model;  // labels aligned to the previous year
  std::optional<double> alignment_cost;
};

struct LongTermCell {
  std::string model;
  int test_year = 0;
  bool ok = false;
  std::string error;
  double auroc = 0.0;
  std::vector<int> classes_skipped;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t excluded = 0;  // patients absent in the test year
};

struct TrajectoryRow {
  std::string patient_id;
  int year = 0;
  int cluster = -1;
  double mean_pain = 0.0;
  int pain_band = 0;
  double mean_systolic_bp = 0.0;
};

struct LongTermReport {
  nlohmann::json config;
  std::string fingerprint;
  std::vector<YearClustering> years;
  std::vector<LongTermCell> cells;
  std::vector<TrajectoryRow> trajectory;
  std::vector<std::string> notes;

  const LongTermCell* find(const std::string& model, int year) const;
};

/// Per-year DTW k-means with labels aligned across consecutive years, then
/// for each test year t: classifiers trained on (history up to s -> label of
/// s + 1) pairs with s + 1 < t and scored by macro AUROC on year t. Test
/// year 2 has no such pair and trains on year-1 physiology against year-1
/// labels instead. Throws InsufficientYears.
LongTermReport run_long_term(const CohortDataset& data, const LongTermConfig& cfg);

/// FNV-1a of the grid and raw-pain CSV serialisations.
std::string fingerprint(const CohortDataset& data);

nlohmann::json to_json(const ShortTermReport& r);
nlohmann::json to_json(const LongTermReport& r);

}  // namespace paincast::pipeline
