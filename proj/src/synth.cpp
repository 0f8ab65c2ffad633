#include "paincast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "paincast/csv.hpp"
#include "paincast/error.hpp"
#include "paincast/ingest.hpp"
#include "paincast/parallel.hpp"
#include "paincast/rng.hpp"

namespace paincast {

namespace {

// Stream keys used with derive_seed.
constexpr std::uint64_t kPhenotypeStream = 1;
constexpr std::uint64_t kScheduleStream = 2;
constexpr std::uint64_t kChannelStream = 3;

std::string patient_name(int index, int n_patients) {
  const int width = std::max(3, static_cast<int>(std::to_string(n_patients).size()));
  std::string digits = std::to_string(index + 1);
  return "p" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0') +
         digits;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

SynthConfig SynthConfig::defaults() {
  SynthConfig cfg;
  //                 SpO2  SBP    DBP   Pulse  Resp  Temp
  cfg.phenotypes = {
      {{97.5, 116.0, 72.0, 78.0, 16.0, 36.7}, -1.2},
      {{95.5, 128.0, 80.0, 94.0, 19.0, 37.1}, 0.0},
      {{93.5, 140.0, 88.0, 110.0, 22.0, 37.5}, 1.2},
  };
  cfg.transition = {{0.8, 0.15, 0.05}, {0.1, 0.8, 0.1}, {0.05, 0.15, 0.8}};
  cfg.ar_coef = {0.8, 0.85, 0.85, 0.8, 0.75, 0.9};
  cfg.vital_sd = {1.2, 7.0, 5.0, 7.0, 1.8, 0.25};
  cfg.pain_weight = {-0.5, 0.3, 0.2, 0.6, 0.4, 0.3};
  cfg.pain_ref = {95.5, 128.0, 80.0, 94.0, 19.0, 37.1};
  cfg.pain_scale = {2.0, 12.0, 8.0, 12.0, 3.0, 0.4};
  // SpO2, SBP, DBP, Pulse, Resp, Temp, Pain
  cfg.missingness = {0.652, 0.745, 0.745, 0.677, 0.673, 0.782, 0.685};
  return cfg;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, "synth: " + why); };
  if (n_patients < 1) fail("n_patients must be >= 1");
  if (n_years < 1) fail("n_years must be >= 1");
  const std::size_t k = phenotypes.size();
  if (k == 0) fail("at least one phenotype is required");
  if (transition.size() != k) fail("transition matrix must be K x K");
  for (const auto& row : transition) {
    if (row.size() != k) fail("transition matrix must be K x K");
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) fail("transition probabilities must be non-negative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) fail("transition rows must sum to 1");
  }
  if (!initial.empty()) {
    if (initial.size() != k) fail("initial distribution must have K entries");
    double sum = 0.0;
    for (double p : initial) sum += p;
    if (std::abs(sum - 1.0) > 1e-12) fail("initial distribution must sum to 1");
  }
  for (double a : ar_coef) {
    if (!(a > -1.0 && a < 1.0)) fail("AR coefficients must lie in (-1, 1)");
  }
  for (double s : vital_sd) {
    if (!(s >= 0.0) || !std::isfinite(s)) fail("vital_sd must be finite and >= 0");
  }
  for (double s : pain_scale) {
    if (!(s > 0.0)) fail("pain_scale entries must be > 0");
  }
  for (double m : missingness) {
    if (!(m >= 0.0 && m < 1.0)) fail("missingness targets must lie in [0, 1)");
  }
  if (!(pain_noise >= 0.0)) fail("pain_noise must be >= 0");
  if (visits_per_year_min < 1 || visits_per_year_max < visits_per_year_min) fail("bad visits-per-year range");
  if (visit_hours_min < 1 || visit_hours_max < visit_hours_min) fail("bad visit-length range");
  // Visits are laid out in equal slots with a 13 h spacer so the default 12 h
  // segmentation recovers them exactly.
  const double slot_hours = 365.0 * 24.0 / visits_per_year_max;
  if (visit_hours_max + 14 > slot_hours) fail("visits do not fit in a year");
  if (!(year_absent_prob >= 0.0 && year_absent_prob < 1.0)) fail("year_absent_prob must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const SynthConfig& cfg) {
  nlohmann::json phen = nlohmann::json::array();
  for (const auto& p : cfg.phenotypes) phen.push_back({{"vital_mean", p.vital_mean}, {"pain_level", p.pain_level}});
  j = nlohmann::json{{"n_patients", cfg.n_patients},
                     {"n_years", cfg.n_years},
                     {"phenotypes", phen},
                     {"transition", cfg.transition},
                     {"initial", cfg.initial},
                     {"ar_coef", cfg.ar_coef},
                     {"vital_sd", cfg.vital_sd},
                     {"pain_weight", cfg.pain_weight},
                     {"pain_ref", cfg.pain_ref},
                     {"pain_scale", cfg.pain_scale},
                     {"pain_noise", cfg.pain_noise},
                     {"visits_per_year_min", cfg.visits_per_year_min},
                     {"visits_per_year_max", cfg.visits_per_year_max},
                     {"visit_hours_min", cfg.visit_hours_min},
                     {"visit_hours_max", cfg.visit_hours_max},
                     {"missingness", cfg.missingness},
                     {"year_absent_prob", cfg.year_absent_prob},
                     {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& cfg) {
  cfg = SynthConfig::defaults();
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  read("n_patients", cfg.n_patients);
  read("n_years", cfg.n_years);
  if (j.contains("phenotypes")) {
    cfg.phenotypes.clear();
    for (const auto& p : j.at("phenotypes")) {
      Phenotype ph;
      p.at("vital_mean").get_to(ph.vital_mean);
      if (p.contains("pain_level")) p.at("pain_level").get_to(ph.pain_level);
      cfg.phenotypes.push_back(ph);
    }
  }
  read("transition", cfg.transition);
  read("initial", cfg.initial);
  read("ar_coef", cfg.ar_coef);
  read("vital_sd", cfg.vital_sd);
  read("pain_weight", cfg.pain_weight);
  read("pain_ref", cfg.pain_ref);
  read("pain_scale", cfg.pain_scale);
  read("pain_noise", cfg.pain_noise);
  read("visits_per_year_min", cfg.visits_per_year_min);
  read("visits_per_year_max", cfg.visits_per_year_max);
  read("visit_hours_min", cfg.visit_hours_min);
  read("visit_hours_max", cfg.visit_hours_max);
  read("missingness", cfg.missingness);
  read("year_absent_prob", cfg.year_absent_prob);
  read("seed", cfg.seed);
}

int SynthCohort::phenotype(const std::string& patient, int year) const {
  for (const auto& t : truth) {
    if (t.patient_id == patient && t.year == year) return t.phenotype;
  }
  return -1;
}

namespace {

struct PatientOutput {
  std::vector<RawRecord> records;
  std::vector<TruthLabel> truth;
};

PatientOutput generate_patient(const SynthConfig& cfg, int index) {
  PatientOutput out;
  const std::string id = patient_name(index, cfg.n_patients);
  const auto pkey = static_cast<std::uint64_t>(index);
  const std::size_t k = cfg.phenotypes.size();

  Rng chain(derive_seed(cfg.seed, {kPhenotypeStream, pkey}));
  std::vector<double> initial = cfg.initial;
  if (initial.empty()) initial.assign(k, 1.0 / static_cast<double>(k));
  std::size_t state = chain.categorical(initial);
  std::vector<int> present_years;
  for (int year = 1; year <= cfg.n_years; ++year) {
    if (year > 1) state = chain.categorical(cfg.transition[state]);
    // Year 1 is always present so the cohort year range stays 1..Y.
    const bool absent = year > 1 && chain.bernoulli(cfg.year_absent_prob);
    if (absent) continue;
    out.truth.push_back({id, year, static_cast<int>(state)});
  }

  for (const auto& label : out.truth) {
    const int year = label.year;
    const auto ykey = static_cast<std::uint64_t>(year);
    const Phenotype& ph = cfg.phenotypes[static_cast<std::size_t>(label.phenotype)];
    Rng schedule(derive_seed(cfg.seed, {kScheduleStream, pkey, ykey}));
    std::array<Rng, kChannelCount> streams{
        Rng(derive_seed(cfg.seed, {kChannelStream, pkey, ykey, 0})),
        Rng(derive_seed(cfg.seed, {kChannelStream, pkey, ykey, 1})),
        Rng(derive_seed(cfg.seed, {kChannelStream, pkey, ykey, 2})),
        Rng(derive_seed(cfg.seed, {kChannelStream, pkey, ykey, 3})),
        Rng(derive_seed(cfg.seed, {kChannelStream, pkey, ykey, 4})),
        Rng(derive_seed(cfg.seed, {kChannelStream, pkey, ykey, 5})),
        Rng(derive_seed(cfg.seed, {kChannelStream, pkey, ykey, 6})),
    };

    const int n_visits = static_cast<int>(schedule.integer(cfg.visits_per_year_min, cfg.visits_per_year_max));
    const Hour year_start_hour = static_cast<Hour>(year - 1) * 365 * 24;
    const Hour slot = 365 * 24 / n_visits;
    for (int v = 0; v < n_visits; ++v) {
      const int length = static_cast<int>(schedule.integer(cfg.visit_hours_min, cfg.visit_hours_max));
      const Hour latest_offset = slot - length - 14;
      const Hour first_hour = year_start_hour + v * slot + 1 + schedule.integer(0, latest_offset);

      std::array<double, kVitalCount> dev{};
      for (std::size_t c = 0; c < kVitalCount; ++c) dev[c] = cfg.vital_sd[c] * streams[c].normal();
      for (int h = 0; h < length; ++h) {
        const Hour hour = first_hour + h;
        if (h > 0) {
          for (std::size_t c = 0; c < kVitalCount; ++c) {
            const double a = cfg.ar_coef[c];
            dev[c] = a * dev[c] + cfg.vital_sd[c] * std::sqrt(1.0 - a * a) * streams[c].normal();
          }
        }
        std::array<double, kVitalCount> x{};
        double z = ph.pain_level;
        for (std::size_t c = 0; c < kVitalCount; ++c) {
          x[c] = ph.vital_mean[c] + dev[c];
          z += cfg.pain_weight[c] * (x[c] - cfg.pain_ref[c]) / cfg.pain_scale[c];
        }
        z += cfg.pain_noise * streams[index_of(Channel::Pain)].normal();
        const int pain = std::clamp(static_cast<int>(std::lround(10.0 * logistic(z))), 0, 10);

        // Physiological clipping keeps every synthetic record valid.
        x[index_of(Channel::SpO2)] = std::clamp(x[index_of(Channel::SpO2)], 50.0, 100.0);
        x[index_of(Channel::DiastolicBP)] = std::max(x[index_of(Channel::DiastolicBP)], 20.0);
        x[index_of(Channel::SystolicBP)] =
            std::max(x[index_of(Channel::SystolicBP)], x[index_of(Channel::DiastolicBP)] + 5.0);
        x[index_of(Channel::Pulse)] = std::max(x[index_of(Channel::Pulse)], 20.0);
        x[index_of(Channel::Resp)] = std::max(x[index_of(Channel::Resp)], 4.0);
        x[index_of(Channel::Temp)] = std::clamp(x[index_of(Channel::Temp)], 30.5, 44.5);

        RawRecord r;
        r.patient_id = id;
        // Any minute in (60(H-1), 60H] snaps (ceil) to hour H.
        r.timestamp = hour * kMinutesPerHour - schedule.integer(0, kMinutesPerHour - 1);
        bool any = false;
        for (Channel c : kAllChannels) {
          if (streams[index_of(c)].bernoulli(cfg.missingness[index_of(c)])) continue;
          any = true;
          if (c == Channel::Pain) {
            r.pain = pain;
          } else {
            r.vitals[index_of(c)] = x[index_of(c)];
          }
        }
        if (any) out.records.push_back(std::move(r));
      }
    }
  }
  return out;
}

}  // namespace

SynthCohort generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<PatientOutput> per_patient(static_cast<std::size_t>(cfg.n_patients));
  parallel_for(per_patient.size(), [&](std::size_t i) { per_patient[i] = generate_patient(cfg, static_cast<int>(i)); });
  SynthCohort cohort;
  for (auto& p : per_patient) {
    std::move(p.records.begin(), p.records.end(), std::back_inserter(cohort.records));
    std::move(p.truth.begin(), p.truth.end(), std::back_inserter(cohort.truth));
  }
  const auto visits = segment_visits(cohort.records, IngestConfig{}.visit_gap);
  cohort.dataset = build_cohort(visits, Rounding::Ceil);
  return cohort;
}

void write_truth_csv(std::ostream& out, const std::vector<TruthLabel>& truth) {
  out << "patient_id,year,phenotype\n";
  for (const auto& t : truth) out << t.patient_id << ',' << t.year << ',' << t.phenotype << '\n';
}

std::vector<TruthLabel> read_truth_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || csv::trim(line) != "patient_id,year,phenotype") {
    throw Error(ErrorCode::MalformedHeader, "expected header patient_id,year,phenotype");
  }
  std::vector<TruthLabel> truth;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    const auto year = f.size() == 3 ? csv::parse_int(f[1]) : std::nullopt;
    const auto ph = f.size() == 3 ? csv::parse_int(f[2]) : std::nullopt;
    if (!year || !ph) throw Error(ErrorCode::UnparseableRow, "truth line " + std::to_string(line_no));
    truth.push_back({std::string(f[0]), static_cast<int>(*year), static_cast<int>(*ph)});
  }
  return truth;
}

}  // namespace paincast
