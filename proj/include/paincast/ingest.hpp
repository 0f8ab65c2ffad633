#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "paincast/datamodel.hpp"

namespace paincast {

enum class Rounding { Ceil, Nearest };

std::string_view to_string(Rounding r) noexcept;
Rounding rounding_from_string(std::string_view text);

struct IngestConfig {
  Minutes visit_gap = 12 * kMinutesPerHour;
  Rounding rounding = Rounding::Ceil;
  int max_gap_hours = 2;

  void validate() const;
};

/// A row that parsed but failed validate_record.
struct Reject {
  std::size_t line = 0;
  RawRecord record;
  std::vector<Violation> violations;
};

struct ParseResult {
  std::vector<RawRecord> records;
  std::vector<Reject> rejects;
};

/// Expected header of record files.
inline constexpr std::string_view kRecordHeader =
    "patient_id,timestamp,spo2,systolic_bp,diastolic_bp,pulse,resp,temp,pain";

/// Parses the record CSV. Rows failing validation land in `rejects`.
/// Throws Error{MalformedHeader} or Error{UnparseableRow} (with line number).
ParseResult parse_records(std::istream& source);

void write_records_csv(std::ostream& out, std::span<const RawRecord> records);
/// One JSON object per line: {"line":..,"patient_id":..,"timestamp":..,"violations":[..]}
void write_rejects_jsonl(std::ostream& out, std::span<const Reject> rejects);

/// Sorts each patient's records by time and splits wherever the gap between
/// consecutive records exceeds `gap`. Output is ordered by (patient, start)
/// and independent of input order.
std::vector<Visit> segment_visits(std::vector<RawRecord> records, Minutes gap);

Hour snap_hour(Minutes t, Rounding rounding) noexcept;

/// Grids one visit hourly; colliding (hour, channel) cells take the mean.
GriddedSeries snap_to_hour(const Visit& visit, Rounding rounding = Rounding::Ceil);

/// Linear interpolation, per channel and per visit, of Missing cells strictly
/// between two Observed cells at most `max_gap` grid hours apart.
GriddedSeries interpolate_visit(const GriddedSeries& series, int max_gap = 2);

/// Snaps every visit, then groups by patient and by the year of each visit's
/// start. The raw pain store is filled from the records directly.
CohortDataset build_cohort(std::span<const Visit> visits, Rounding rounding = Rounding::Ceil);

CohortDataset interpolate_cohort(const CohortDataset& raw, int max_gap = 2);

struct MissingnessRow {
  std::string variable;
  double before = 0.0;  // percent of grid cells
  double after = 0.0;
};

/// Rows in the order BP, SpO2, Pulse, Resp, Temp, Pain. BP averages the
/// systolic and diastolic rates.
struct MissingnessReport {
  std::vector<MissingnessRow> rows;
  const MissingnessRow& at(std::string_view variable) const;
};

MissingnessReport missingness_report(const CohortDataset& before, const CohortDataset& after);
void write_missingness_csv(std::ostream& out, const MissingnessReport& report);

/// Percent of Missing cells per channel over all grid cells of the cohort.
std::array<double, kChannelCount> missing_percent(const CohortDataset& data);

}  // namespace paincast
