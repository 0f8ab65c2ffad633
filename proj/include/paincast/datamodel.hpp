#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace paincast {

inline constexpr std::size_t kVitalCount = 6;
inline constexpr std::size_t kChannelCount = 7;

/// Fixed channel order. The numeric values are the column order of every
/// matrix and file in the project and must never be reordered.
enum class Channel : std::uint8_t {
  SpO2 = 0,         // %
  SystolicBP = 1,   // mmHg
  DiastolicBP = 2,  // mmHg
  Pulse = 3,        // beats/min
  Resp = 4,         // breaths/min
  Temp = 5,         // degrees Celsius
  Pain = 6,         // ordinal 0..10
};

inline constexpr std::array<Channel, kChannelCount> kAllChannels = {
    Channel::SpO2, Channel::SystolicBP, Channel::DiastolicBP, Channel::Pulse,
    Channel::Resp, Channel::Temp, Channel::Pain};

constexpr std::size_t index_of(Channel c) noexcept { return static_cast<std::size_t>(c); }

/// Column name used in CSV headers ("spo2", "systolic_bp", ...).
std::string_view channel_name(Channel c) noexcept;
std::optional<Channel> channel_from_name(std::string_view name) noexcept;

/// Minutes since the cohort epoch.
using Minutes = std::int64_t;
/// Hours since the cohort epoch (a snapped grid time).
using Hour = std::int64_t;

inline constexpr Minutes kMinutesPerHour = 60;
inline constexpr Minutes kMinutesPerYear = 365 * 24 * 60;

/// 1-based year index of a timestamp.
constexpr int year_of(Minutes t) noexcept {
  return static_cast<int>((t >= 0 ? t : t - kMinutesPerYear + 1) / kMinutesPerYear) + 1;
}

struct RawRecord {
  std::string patient_id;
  Minutes timestamp = 0;
  std::array<std::optional<double>, kVitalCount> vitals{};
  std::optional<int> pain;

  /// Value of any channel; pain is widened to double.
  std::optional<double> value(Channel c) const;
  void set(Channel c, double v);

  friend bool operator==(const RawRecord&, const RawRecord&) = default;
};

enum class Violation : std::uint8_t {
  NoMeasurement,
  NonFiniteValue,
  PainOutOfRange,
  SpO2OutOfRange,
  PulseNonPositive,
  RespNonPositive,
  TempOutOfRange,
  DiastolicNonPositive,
  BPOrderViolation,
};

std::string_view to_string(Violation v) noexcept;

/// Empty iff every record invariant holds. Never throws.
std::vector<Violation> validate_record(const RawRecord& record);

struct Visit {
  std::string patient_id;
  std::vector<RawRecord> records;  // strictly ordered by timestamp
  Minutes start = 0;
  Minutes end = 0;
};

enum class CellState : std::uint8_t { Missing = 0, Observed = 1, Interpolated = 2 };

char to_char(CellState s) noexcept;
std::optional<CellState> cell_state_from_char(char c) noexcept;

/// Hourly multichannel series for one patient-year. Rows from several visits
/// are concatenated in time order; `visit_starts` holds the first row of each
/// visit. Within a visit the hour index advances by exactly one per row.
struct GriddedSeries {
  std::string patient_id;
  int year = 1;
  std::vector<Hour> hours;
  std::vector<std::size_t> visit_starts;
  std::vector<double> values;     // rows x kChannelCount, NaN where Missing
  std::vector<CellState> states;  // rows x kChannelCount

  std::size_t rows() const noexcept { return hours.size(); }
  double value(std::size_t row, Channel c) const { return values[row * kChannelCount + index_of(c)]; }
  CellState state(std::size_t row, Channel c) const { return states[row * kChannelCount + index_of(c)]; }
  bool present(std::size_t row, Channel c) const { return state(row, c) != CellState::Missing; }
  void set(std::size_t row, Channel c, double v, CellState s);
  void clear(std::size_t row, Channel c);

  /// Half-open row ranges [begin, end) of each visit.
  std::vector<std::pair<std::size_t, std::size_t>> visit_ranges() const;

  /// Appends `rows` Missing rows at consecutive hours starting at `first_hour`
  /// as a new visit.
  void append_visit(Hour first_hour, std::size_t rows);

  friend bool operator==(const GriddedSeries&, const GriddedSeries&);
};

struct RawPainObservation {
  Minutes timestamp = 0;
  Hour hour = 0;  // snapped grid hour the observation belongs to
  int score = 0;

  friend bool operator==(const RawPainObservation&, const RawPainObservation&) = default;
};

struct PatientYear {
  GriddedSeries grid;
  /// Untouched by interpolation; the only source of evaluation targets.
  std::vector<RawPainObservation> raw_pain;

  /// Latest raw score snapped to `hour`, if any.
  std::optional<int> raw_pain_at(Hour hour) const;

  friend bool operator==(const PatientYear&, const PatientYear&) = default;
};

struct CohortDataset {
  std::map<std::string, std::map<int, PatientYear>> patients;

  /// Largest year index present (years run 1..n_years()).
  int n_years() const;
  std::size_t n_patients() const noexcept { return patients.size(); }
  const PatientYear* find(const std::string& patient, int year) const;

  friend bool operator==(const CohortDataset&, const CohortDataset&) = default;
};

/// One coherence violation found by `audit`.
struct AuditIssue {
  std::string patient_id;
  int year = 0;
  std::size_t row = 0;
  std::string message;
};

/// Shared coherence check: Missing <=> NaN value, Interpolated cells strictly
/// between two Observed cells of the same channel and visit at most
/// `max_gap_hours` apart, consecutive hours inside a visit, strictly
/// increasing hours overall, contiguous cohort years.
std::vector<AuditIssue> audit(const GriddedSeries& series, int max_gap_hours = 2);
std::vector<AuditIssue> audit(const CohortDataset& data, int max_gap_hours = 2);

/// Per-cohort channel statistics over present (non-Missing) cells.
struct ChannelStats {
  std::array<double, kChannelCount> mean{};
  std::array<double, kChannelCount> sd{};
};
ChannelStats channel_stats(const CohortDataset& data);

// Grid file: patient_id,year,visit,hour,<7 channel columns>,mask
// mask is a 7-character string over {O,I,M}. Values use shortest round-trip
// decimal text, so write/read is bit-exact.
void write_grid_csv(std::ostream& out, const CohortDataset& data);
// Raw pain file: patient_id,year,timestamp,hour,pain
void write_raw_pain_csv(std::ostream& out, const CohortDataset& data);
CohortDataset read_cohort(std::istream& grid_csv, std::istream& raw_pain_csv);

void save_cohort(const std::string& directory, const CohortDataset& data);
CohortDataset load_cohort(const std::string& directory);

}  // namespace paincast
