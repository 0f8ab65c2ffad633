#include "paincast/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include "json.hpp"

#include "paincast/csv.hpp"
#include "paincast/error.hpp"

namespace paincast {

std::string_view to_string(Rounding r) noexcept { return r == Rounding::Ceil ? "ceil" : "nearest"; }

Rounding rounding_from_string(std::string_view text) {
  if (text == "ceil") return Rounding::Ceil;
  if (text == "nearest") return Rounding::Nearest;
  throw Error(ErrorCode::InvalidConfig, "rounding must be ceil or nearest, got '" + std::string(text) + "'");
}

void IngestConfig::validate() const {
  if (visit_gap < kMinutesPerHour) {
    throw Error(ErrorCode::InvalidConfig, "visit gap threshold must be at least 60 minutes");
  }
  if (max_gap_hours < 1) throw Error(ErrorCode::InvalidConfig, "max interpolation gap must be >= 1 hour");
}

namespace {

// Column order of the record file after patient_id and timestamp.
constexpr std::array<Channel, kChannelCount> kFileOrder = {
    Channel::SpO2, Channel::SystolicBP, Channel::DiastolicBP, Channel::Pulse,
    Channel::Resp, Channel::Temp, Channel::Pain};

Hour floor_div(Minutes a, Minutes b) noexcept {
  Hour q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

ParseResult parse_records(std::istream& source) {
  std::string line;
  if (!std::getline(source, line)) throw Error(ErrorCode::MalformedHeader, "record file is empty");
  {
    const auto fields = csv::split(line);
    const auto expected = csv::split(kRecordHeader);
    bool ok = fields.size() == expected.size();
    for (std::size_t i = 0; ok && i < fields.size(); ++i) ok = csv::trim(fields[i]) == expected[i];
    if (!ok) {
      throw Error(ErrorCode::MalformedHeader,
                  "expected header '" + std::string(kRecordHeader) + "', got '" + line + "'");
    }
  }
  ParseResult result;
  std::size_t line_no = 1;
  while (std::getline(source, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    auto fail = [&](const std::string& why) -> void {
      throw Error(ErrorCode::UnparseableRow, "line " + std::to_string(line_no) + ": " + why);
    };
    if (f.size() != 2 + kChannelCount) fail("expected 9 fields, got " + std::to_string(f.size()));
    RawRecord r;
    r.patient_id = std::string(csv::trim(f[0]));
    if (r.patient_id.empty()) fail("empty patient_id");
    const auto ts = csv::parse_int(f[1]);
    if (!ts) fail("timestamp is not an integer");
    r.timestamp = *ts;
    for (std::size_t i = 0; i < kChannelCount; ++i) {
      const auto text = csv::trim(f[2 + i]);
      if (text.empty()) continue;
      const Channel c = kFileOrder[i];
      if (c == Channel::Pain) {
        const auto p = csv::parse_int(text);
        if (!p) fail("pain is not an integer");
        r.pain = static_cast<int>(std::clamp<long long>(*p, -1000, 1000));
      } else {
        const auto v = csv::parse_double(text);
        if (!v) fail("unparseable value in column " + std::string(channel_name(c)));
        r.vitals[index_of(c)] = *v;
      }
    }
    auto violations = validate_record(r);
    if (violations.empty()) {
      result.records.push_back(std::move(r));
    } else {
      result.rejects.push_back({line_no, std::move(r), std::move(violations)});
    }
  }
  return result;
}

void write_records_csv(std::ostream& out, std::span<const RawRecord> records) {
  out << kRecordHeader << '\n';
  for (const auto& r : records) {
    out << r.patient_id << ',' << r.timestamp;
    for (Channel c : kFileOrder) {
      out << ',';
      if (c == Channel::Pain) {
        if (r.pain) out << *r.pain;
      } else if (const auto& v = r.vitals[index_of(c)]) {
        out << csv::format_double(*v);
      }
    }
    out << '\n';
  }
}

void write_rejects_jsonl(std::ostream& out, std::span<const Reject> rejects) {
  for (const auto& reject : rejects) {
    nlohmann::ordered_json j;
    j["line"] = reject.line;
    j["patient_id"] = reject.record.patient_id;
    j["timestamp"] = reject.record.timestamp;
    auto& codes = j["violations"] = nlohmann::ordered_json::array();
    for (Violation v : reject.violations) codes.push_back(std::string(to_string(v)));
    out << j.dump() << '\n';
  }
}

std::vector<Visit> segment_visits(std::vector<RawRecord> records, Minutes gap) {
  // Full ordering makes the result independent of input order even with
  // duplicate timestamps.
  std::sort(records.begin(), records.end(), [](const RawRecord& a, const RawRecord& b) {
    if (a.patient_id != b.patient_id) return a.patient_id < b.patient_id;
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.pain != b.pain) return a.pain < b.pain;
    return a.vitals < b.vitals;
  });
  std::vector<Visit> visits;
  for (auto& r : records) {
    const bool new_visit = visits.empty() || visits.back().patient_id != r.patient_id ||
                           r.timestamp - visits.back().end > gap;
    if (new_visit) {
      Visit v;
      v.patient_id = r.patient_id;
      v.start = r.timestamp;
      visits.push_back(std::move(v));
    }
    visits.back().end = r.timestamp;
    visits.back().records.push_back(std::move(r));
  }
  return visits;
}

Hour snap_hour(Minutes t, Rounding rounding) noexcept {
  if (rounding == Rounding::Ceil) return -floor_div(-t, kMinutesPerHour);
  return floor_div(t + kMinutesPerHour / 2, kMinutesPerHour);
}

GriddedSeries snap_to_hour(const Visit& visit, Rounding rounding) {
  GriddedSeries g;
  g.patient_id = visit.patient_id;
  g.year = year_of(visit.start);
  if (visit.records.empty()) return g;
  Hour first = snap_hour(visit.records.front().timestamp, rounding);
  Hour last = first;
  for (const auto& r : visit.records) {
    const Hour h = snap_hour(r.timestamp, rounding);
    first = std::min(first, h);
    last = std::max(last, h);
  }
  const std::size_t n = static_cast<std::size_t>(last - first + 1);
  g.append_visit(first, n);
  std::vector<double> sum(n * kChannelCount, 0.0);
  std::vector<int> count(n * kChannelCount, 0);
  for (const auto& r : visit.records) {
    const std::size_t row = static_cast<std::size_t>(snap_hour(r.timestamp, rounding) - first);
    for (Channel c : kAllChannels) {
      if (const auto v = r.value(c)) {
        sum[row * kChannelCount + index_of(c)] += *v;
        ++count[row * kChannelCount + index_of(c)];
      }
    }
  }
  for (std::size_t row = 0; row < n; ++row) {
    for (Channel c : kAllChannels) {
      const std::size_t i = row * kChannelCount + index_of(c);
      if (count[i] > 0) g.set(row, c, sum[i] / count[i], CellState::Observed);
    }
  }
  return g;
}

GriddedSeries interpolate_visit(const GriddedSeries& series, int max_gap) {
  GriddedSeries g = series;
  for (const auto& [begin, end] : g.visit_ranges()) {
    for (Channel c : kAllChannels) {
      std::optional<std::size_t> prev;
      for (std::size_t r = begin; r < end; ++r) {
        if (g.state(r, c) != CellState::Observed) continue;
        if (prev) {
          const Hour span = g.hours[r] - g.hours[*prev];
          if (span > 1 && span <= max_gap) {
            const double a = g.value(*prev, c);
            const double b = g.value(r, c);
            for (std::size_t q = *prev + 1; q < r; ++q) {
              if (g.state(q, c) != CellState::Missing) continue;
              const double t = static_cast<double>(g.hours[q] - g.hours[*prev]) / static_cast<double>(span);
              g.set(q, c, a + (b - a) * t, CellState::Interpolated);
            }
          }
        }
        prev = r;
      }
    }
  }
  return g;
}

CohortDataset build_cohort(std::span<const Visit> visits, Rounding rounding) {
  std::vector<const Visit*> ordered;
  ordered.reserve(visits.size());
  for (const auto& v : visits) ordered.push_back(&v);
  std::stable_sort(ordered.begin(), ordered.end(), [](const Visit* a, const Visit* b) {
    if (a->patient_id != b->patient_id) return a->patient_id < b->patient_id;
    return a->start < b->start;
  });
  CohortDataset data;
  for (const Visit* visit : ordered) {
    if (visit->records.empty()) continue;
    const GriddedSeries snapped = snap_to_hour(*visit, rounding);
    auto& py = data.patients[visit->patient_id][snapped.year];
    auto& g = py.grid;
    g.patient_id = snapped.patient_id;
    g.year = snapped.year;
    if (!g.hours.empty() && snapped.hours.front() <= g.hours.back()) {
      throw Error(ErrorCode::ShapeMismatch, "visits of patient " + visit->patient_id + " overlap on the hourly grid");
    }
    g.visit_starts.push_back(g.rows());
    g.hours.insert(g.hours.end(), snapped.hours.begin(), snapped.hours.end());
    g.values.insert(g.values.end(), snapped.values.begin(), snapped.values.end());
    g.states.insert(g.states.end(), snapped.states.begin(), snapped.states.end());
    for (const auto& r : visit->records) {
      if (r.pain) py.raw_pain.push_back({r.timestamp, snap_hour(r.timestamp, rounding), *r.pain});
    }
  }
  return data;
}

CohortDataset interpolate_cohort(const CohortDataset& raw, int max_gap) {
  CohortDataset out = raw;
  for (auto& [id, by_year] : out.patients) {
    for (auto& [year, py] : by_year) py.grid = interpolate_visit(py.grid, max_gap);
  }
  return out;
}

std::array<double, kChannelCount> missing_percent(const CohortDataset& data) {
  std::array<std::size_t, kChannelCount> missing{};
  std::size_t cells = 0;
  for (const auto& [id, by_year] : data.patients) {
    for (const auto& [year, py] : by_year) {
      const auto& g = py.grid;
      cells += g.rows();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (Channel c : kAllChannels) {
          if (!g.present(r, c)) ++missing[index_of(c)];
        }
      }
    }
  }
  std::array<double, kChannelCount> pct{};
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    pct[c] = cells == 0 ? 0.0 : 100.0 * static_cast<double>(missing[c]) / static_cast<double>(cells);
  }
  return pct;
}

const MissingnessRow& MissingnessReport::at(std::string_view variable) const {
  for (const auto& row : rows) {
    if (row.variable == variable) return row;
  }
  throw Error(ErrorCode::InvalidConfig, "no missingness row named " + std::string(variable));
}

MissingnessReport missingness_report(const CohortDataset& before, const CohortDataset& after) {
  bool same = before.patients.size() == after.patients.size();
  for (auto a = before.patients.begin(), b = after.patients.begin(); same && a != before.patients.end(); ++a, ++b) {
    same = a->first == b->first && a->second.size() == b->second.size();
    for (auto ya = a->second.begin(), yb = b->second.begin(); same && ya != a->second.end(); ++ya, ++yb) {
      same = ya->first == yb->first && ya->second.grid.hours == yb->second.grid.hours;
    }
  }
  if (!same) throw Error(ErrorCode::ShapeMismatch, "before/after cohorts do not share a grid");

  const auto pb = missing_percent(before);
  const auto pa = missing_percent(after);
  auto at = [](const std::array<double, kChannelCount>& p, Channel c) { return p[index_of(c)]; };
  MissingnessReport report;
  report.rows.push_back({"BP", 0.5 * (at(pb, Channel::SystolicBP) + at(pb, Channel::DiastolicBP)),
                         0.5 * (at(pa, Channel::SystolicBP) + at(pa, Channel::DiastolicBP))});
  report.rows.push_back({"SpO2", at(pb, Channel::SpO2), at(pa, Channel::SpO2)});
  report.rows.push_back({"Pulse", at(pb, Channel::Pulse), at(pa, Channel::Pulse)});
  report.rows.push_back({"Resp", at(pb, Channel::Resp), at(pa, Channel::Resp)});
  report.rows.push_back({"Temp", at(pb, Channel::Temp), at(pa, Channel::Temp)});
  report.rows.push_back({"Pain Score", at(pb, Channel::Pain), at(pa, Channel::Pain)});
  return report;
}

void write_missingness_csv(std::ostream& out, const MissingnessReport& report) {
  out << "variable,raw_data,after_interpolation\n";
  for (const auto& row : report.rows) {
    out << row.variable << ',' << csv::format_double(row.before) << ',' << csv::format_double(row.after) << '\n';
  }
}

}  // namespace paincast
