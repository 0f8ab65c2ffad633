#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "paincast/datamodel.hpp"

namespace paincast {

struct Phenotype {
  std::array<double, kVitalCount> vital_mean{};  // physical units
  double pain_level = 0.0;                       // offset of the pain predictor
};

/// Generator settings for a synthetic cohort with planted ground truth.
///
/// Per patient the phenotype follows a Markov chain across years. Within a
/// visit every vital channel is an AR(1) process around its phenotype mean
/// (stationary sd `vital_sd`). Pain at each hour is
///   round(10 * logistic(pain_level + sum_c w_c (x_c - ref_c) / scale_c + pain_noise * eps))
/// clipped to 0..10. Each (hour, channel) cell is dropped i.i.d. with the
/// channel's missingness rate.
struct SynthConfig {
  int n_patients = 100;
  int n_years = 5;
  std::vector<Phenotype> phenotypes;
  std::vector<std::vector<double>> transition;  // K x K, row-stochastic
  std::vector<double> initial;                  // K, empty = uniform
  std::array<double, kVitalCount> ar_coef{};
  std::array<double, kVitalCount> vital_sd{};
  std::array<double, kVitalCount> pain_weight{};
  std::array<double, kVitalCount> pain_ref{};
  std::array<double, kVitalCount> pain_scale{};
  double pain_noise = 0.3;
  int visits_per_year_min = 2;
  int visits_per_year_max = 4;
  int visit_hours_min = 48;
  int visit_hours_max = 96;
  std::array<double, kChannelCount> missingness{};
  double year_absent_prob = 0.0;
  std::uint64_t seed = 1;

  /// Three phenotypes, persistent transitions, heavy per-channel missingness.
  static SynthConfig defaults();

  /// Throws Error{InvalidConfig}.
  void validate() const;

  std::size_t n_phenotypes() const noexcept { return phenotypes.size(); }
};

void to_json(nlohmann::json& j, const SynthConfig& cfg);
/// Missing keys keep the values of SynthConfig::defaults().
void from_json(const nlohmann::json& j, SynthConfig& cfg);

struct TruthLabel {
  std::string patient_id;
  int year = 0;
  int phenotype = 0;
};

struct SynthCohort {
  std::vector<RawRecord> records;
  std::vector<TruthLabel> truth;
  /// Records snapped to the hourly grid (not interpolated), grouped by year.
  CohortDataset dataset;

  /// Phenotype of (patient, year), or -1.
  int phenotype(const std::string& patient, int year) const;
};

/// Deterministic in (cfg, cfg.seed). Streams are split per
/// (patient, year, channel) so every patient can be generated independently.
SynthCohort generate_cohort(const SynthConfig& cfg);

void write_truth_csv(std::ostream& out, const std::vector<TruthLabel>& truth);
std::vector<TruthLabel> read_truth_csv(std::istream& in);

}  // namespace paincast
