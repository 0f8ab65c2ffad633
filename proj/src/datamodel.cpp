#include "paincast/datamodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "paincast/csv.hpp"
#include "paincast/error.hpp"

namespace paincast {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string_view channel_name(Channel c) noexcept {
  switch (c) {
    case Channel::SpO2: return "spo2";
    case Channel::SystolicBP: return "systolic_bp";
    case Channel::DiastolicBP: return "diastolic_bp";
    case Channel::Pulse: return "pulse";
    case Channel::Resp: return "resp";
    case Channel::Temp: return "temp";
    case Channel::Pain: return "pain";
  }
  return "?";
}

std::optional<Channel> channel_from_name(std::string_view name) noexcept {
  for (Channel c : kAllChannels) {
    if (channel_name(c) == name) return c;
  }
  return std::nullopt;
}

std::optional<double> RawRecord::value(Channel c) const {
  if (c == Channel::Pain) {
    if (pain) return static_cast<double>(*pain);
    return std::nullopt;
  }
  return vitals[index_of(c)];
}

void RawRecord::set(Channel c, double v) {
  if (c == Channel::Pain) {
    pain = static_cast<int>(std::lround(v));
  } else {
    vitals[index_of(c)] = v;
  }
}

std::string_view to_string(Violation v) noexcept {
  switch (v) {
    case Violation::NoMeasurement: return "NoMeasurement";
    case Violation::NonFiniteValue: return "NonFiniteValue";
    case Violation::PainOutOfRange: return "PainOutOfRange";
    case Violation::SpO2OutOfRange: return "SpO2OutOfRange";
    case Violation::PulseNonPositive: return "PulseNonPositive";
    case Violation::RespNonPositive: return "RespNonPositive";
    case Violation::TempOutOfRange: return "TempOutOfRange";
    case Violation::DiastolicNonPositive: return "DiastolicNonPositive";
    case Violation::BPOrderViolation: return "BPOrderViolation";
  }
  return "?";
}

std::vector<Violation> validate_record(const RawRecord& r) {
  std::vector<Violation> out;
  const bool any = r.pain.has_value() ||
                   std::any_of(r.vitals.begin(), r.vitals.end(), [](const auto& v) { return v.has_value(); });
  if (!any) out.push_back(Violation::NoMeasurement);
  for (const auto& v : r.vitals) {
    if (v && !std::isfinite(*v)) {
      out.push_back(Violation::NonFiniteValue);
      return out;
    }
  }
  if (r.pain && (*r.pain < 0 || *r.pain > 10)) out.push_back(Violation::PainOutOfRange);
  const auto& v = r.vitals;
  if (const auto& s = v[index_of(Channel::SpO2)]; s && !(*s > 0.0 && *s <= 100.0)) {
    out.push_back(Violation::SpO2OutOfRange);
  }
  if (const auto& p = v[index_of(Channel::Pulse)]; p && !(*p > 0.0)) out.push_back(Violation::PulseNonPositive);
  if (const auto& p = v[index_of(Channel::Resp)]; p && !(*p > 0.0)) out.push_back(Violation::RespNonPositive);
  if (const auto& t = v[index_of(Channel::Temp)]; t && !(*t > 30.0 && *t < 45.0)) {
    out.push_back(Violation::TempOutOfRange);
  }
  const auto& sys = v[index_of(Channel::SystolicBP)];
  const auto& dia = v[index_of(Channel::DiastolicBP)];
  if (dia && !(*dia > 0.0)) out.push_back(Violation::DiastolicNonPositive);
  if (sys && !(*sys > 0.0) && !dia) out.push_back(Violation::BPOrderViolation);
  if (sys && dia && !(*sys > *dia)) out.push_back(Violation::BPOrderViolation);
  return out;
}

char to_char(CellState s) noexcept {
  switch (s) {
    case CellState::Missing: return 'M';
    case CellState::Observed: return 'O';
    case CellState::Interpolated: return 'I';
  }
  return '?';
}

std::optional<CellState> cell_state_from_char(char c) noexcept {
  switch (c) {
    case 'M': return CellState::Missing;
    case 'O': return CellState::Observed;
    case 'I': return CellState::Interpolated;
    default: return std::nullopt;
  }
}

void GriddedSeries::set(std::size_t row, Channel c, double v, CellState s) {
  const std::size_t i = row * kChannelCount + index_of(c);
  values[i] = v;
  states[i] = s;
}

void GriddedSeries::clear(std::size_t row, Channel c) {
  const std::size_t i = row * kChannelCount + index_of(c);
  values[i] = kNaN;
  states[i] = CellState::Missing;
}

std::vector<std::pair<std::size_t, std::size_t>> GriddedSeries::visit_ranges() const {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t v = 0; v < visit_starts.size(); ++v) {
    const std::size_t end = v + 1 < visit_starts.size() ? visit_starts[v + 1] : rows();
    ranges.emplace_back(visit_starts[v], end);
  }
  return ranges;
}

void GriddedSeries::append_visit(Hour first_hour, std::size_t n) {
  visit_starts.push_back(rows());
  for (std::size_t i = 0; i < n; ++i) hours.push_back(first_hour + static_cast<Hour>(i));
  values.resize(values.size() + n * kChannelCount, kNaN);
  states.resize(states.size() + n * kChannelCount, CellState::Missing);
}

bool operator==(const GriddedSeries& a, const GriddedSeries& b) {
  if (a.patient_id != b.patient_id || a.year != b.year || a.hours != b.hours ||
      a.visit_starts != b.visit_starts || a.states != b.states || a.values.size() != b.values.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.values[i]) != std::bit_cast<std::uint64_t>(b.values[i])) return false;
  }
  return true;
}

std::optional<int> PatientYear::raw_pain_at(Hour hour) const {
  std::optional<int> found;
  Minutes latest = std::numeric_limits<Minutes>::min();
  for (const auto& obs : raw_pain) {
    if (obs.hour == hour && obs.timestamp >= latest) {
      latest = obs.timestamp;
      found = obs.score;
    }
  }
  return found;
}

int CohortDataset::n_years() const {
  int years = 0;
  for (const auto& [id, by_year] : patients) {
    if (!by_year.empty()) years = std::max(years, by_year.rbegin()->first);
  }
  return years;
}

const PatientYear* CohortDataset::find(const std::string& patient, int year) const {
  const auto p = patients.find(patient);
  if (p == patients.end()) return nullptr;
  const auto y = p->second.find(year);
  return y == p->second.end() ? nullptr : &y->second;
}

std::vector<AuditIssue> audit(const GriddedSeries& g, int max_gap_hours) {
  std::vector<AuditIssue> issues;
  auto report = [&](std::size_t row, std::string msg) {
    issues.push_back({g.patient_id, g.year, row, std::move(msg)});
  };
  const std::size_t n = g.rows();
  if (g.values.size() != n * kChannelCount || g.states.size() != n * kChannelCount) {
    report(0, "value/mask matrix size does not match row count");
    return issues;
  }
  if (n > 0 && (g.visit_starts.empty() || g.visit_starts.front() != 0)) report(0, "first visit must start at row 0");
  for (std::size_t i = 1; i < g.visit_starts.size(); ++i) {
    if (g.visit_starts[i] <= g.visit_starts[i - 1] || g.visit_starts[i] >= n) report(i, "bad visit start");
  }
  for (std::size_t r = 1; r < n; ++r) {
    if (g.hours[r] <= g.hours[r - 1]) report(r, "hours not strictly increasing");
  }
  for (const auto& [begin, end] : g.visit_ranges()) {
    for (std::size_t r = begin + 1; r < end; ++r) {
      if (g.hours[r] != g.hours[r - 1] + 1) report(r, "hour step inside visit is not 1");
    }
    for (Channel c : kAllChannels) {
      std::optional<std::size_t> last_observed;
      for (std::size_t r = begin; r < end; ++r) {
        const double v = g.value(r, c);
        const CellState s = g.state(r, c);
        if ((s == CellState::Missing) != std::isnan(v)) report(r, "mask/value incoherent");
        if (s == CellState::Observed) last_observed = r;
        if (s != CellState::Interpolated) continue;
        std::optional<std::size_t> next_observed;
        for (std::size_t q = r + 1; q < end; ++q) {
          if (g.state(q, c) == CellState::Observed) {
            next_observed = q;
            break;
          }
        }
        if (!last_observed || !next_observed) {
          report(r, "interpolated cell without bracketing observations");
        } else if (g.hours[*next_observed] - g.hours[*last_observed] > max_gap_hours) {
          report(r, "interpolated cell across a gap wider than the window");
        }
      }
    }
  }
  return issues;
}

std::vector<AuditIssue> audit(const CohortDataset& data, int max_gap_hours) {
  std::vector<AuditIssue> issues;
  std::set<int> years;
  for (const auto& [id, by_year] : data.patients) {
    for (const auto& [year, py] : by_year) {
      years.insert(year);
      if (py.grid.patient_id != id || py.grid.year != year) {
        issues.push_back({id, year, 0, "series key does not match its patient/year"});
      }
      auto sub = audit(py.grid, max_gap_hours);
      issues.insert(issues.end(), sub.begin(), sub.end());
      for (const auto& obs : py.raw_pain) {
        if (obs.score < 0 || obs.score > 10) issues.push_back({id, year, 0, "raw pain out of range"});
      }
    }
  }
  if (!years.empty() && (*years.begin() != 1 || *years.rbegin() != static_cast<int>(years.size()))) {
    issues.push_back({"", 0, 0, "cohort years are not the contiguous range 1..Y"});
  }
  return issues;
}

ChannelStats channel_stats(const CohortDataset& data) {
  std::array<double, kChannelCount> sum{}, sum_sq{};
  std::array<std::size_t, kChannelCount> count{};
  for (const auto& [id, by_year] : data.patients) {
    for (const auto& [year, py] : by_year) {
      const auto& g = py.grid;
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (Channel c : kAllChannels) {
          if (!g.present(r, c)) continue;
          const double v = g.value(r, c);
          sum[index_of(c)] += v;
          sum_sq[index_of(c)] += v * v;
          ++count[index_of(c)];
        }
      }
    }
  }
  ChannelStats stats;
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    if (count[c] == 0) {
      stats.mean[c] = 0.0;
      stats.sd[c] = 1.0;
      continue;
    }
    const double n = static_cast<double>(count[c]);
    stats.mean[c] = sum[c] / n;
    const double var = std::max(0.0, sum_sq[c] / n - stats.mean[c] * stats.mean[c]);
    stats.sd[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return stats;
}

void write_grid_csv(std::ostream& out, const CohortDataset& data) {
  out << "patient_id,year,visit,hour";
  for (Channel c : kAllChannels) out << ',' << channel_name(c);
  out << ",mask\n";
  for (const auto& [id, by_year] : data.patients) {
    for (const auto& [year, py] : by_year) {
      const auto& g = py.grid;
      const auto ranges = g.visit_ranges();
      for (std::size_t v = 0; v < ranges.size(); ++v) {
        for (std::size_t r = ranges[v].first; r < ranges[v].second; ++r) {
          out << id << ',' << year << ',' << v << ',' << g.hours[r];
          std::string mask;
          for (Channel c : kAllChannels) {
            out << ',';
            if (g.present(r, c)) out << csv::format_double(g.value(r, c));
            mask.push_back(to_char(g.state(r, c)));
          }
          out << ',' << mask << '\n';
        }
      }
    }
  }
}

void write_raw_pain_csv(std::ostream& out, const CohortDataset& data) {
  out << "patient_id,year,timestamp,hour,pain\n";
  for (const auto& [id, by_year] : data.patients) {
    for (const auto& [year, py] : by_year) {
      for (const auto& obs : py.raw_pain) {
        out << id << ',' << year << ',' << obs.timestamp << ',' << obs.hour << ',' << obs.score << '\n';
      }
    }
  }
}

namespace {

[[noreturn]] void bad_row(const char* file, std::size_t line, const std::string& why) {
  throw Error(ErrorCode::UnparseableRow, std::string(file) + " line " + std::to_string(line) + ": " + why);
}

}  // namespace

CohortDataset read_cohort(std::istream& grid_csv, std::istream& raw_pain_csv) {
  CohortDataset data;
  std::string line;
  if (!std::getline(grid_csv, line)) throw Error(ErrorCode::MalformedHeader, "grid file is empty");
  {
    std::ostringstream expected;
    expected << "patient_id,year,visit,hour";
    for (Channel c : kAllChannels) expected << ',' << channel_name(c);
    expected << ",mask";
    if (csv::trim(line) != expected.str()) throw Error(ErrorCode::MalformedHeader, "unexpected grid header: " + line);
  }
  std::size_t line_no = 1;
  // (patient, year) -> last visit index seen
  std::map<std::pair<std::string, int>, long long> last_visit;
  while (std::getline(grid_csv, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 4 + kChannelCount + 1) bad_row("grid", line_no, "wrong field count");
    const std::string id(f[0]);
    const auto year = csv::parse_int(f[1]);
    const auto visit = csv::parse_int(f[2]);
    const auto hour = csv::parse_int(f[3]);
    const auto mask = csv::trim(f[4 + kChannelCount]);
    if (!year || !visit || !hour || mask.size() != kChannelCount) bad_row("grid", line_no, "bad key fields");
    auto& py = data.patients[id][static_cast<int>(*year)];
    auto& g = py.grid;
    g.patient_id = id;
    g.year = static_cast<int>(*year);
    auto& last = last_visit.try_emplace({id, g.year}, -1).first->second;
    if (*visit != last) {
      if (*visit != last + 1) bad_row("grid", line_no, "visit indices must be consecutive");
      g.visit_starts.push_back(g.rows());
      last = *visit;
    }
    g.hours.push_back(*hour);
    for (std::size_t c = 0; c < kChannelCount; ++c) {
      const auto state = cell_state_from_char(mask[c]);
      if (!state) bad_row("grid", line_no, "bad mask character");
      if (*state == CellState::Missing) {
        if (!csv::trim(f[4 + c]).empty()) bad_row("grid", line_no, "value present in a Missing cell");
        g.values.push_back(kNaN);
      } else {
        const auto v = csv::parse_double(f[4 + c]);
        if (!v) bad_row("grid", line_no, "unparseable value");
        g.values.push_back(*v);
      }
      g.states.push_back(*state);
    }
  }

  if (!std::getline(raw_pain_csv, line) || csv::trim(line) != "patient_id,year,timestamp,hour,pain") {
    throw Error(ErrorCode::MalformedHeader, "unexpected raw pain header");
  }
  line_no = 1;
  while (std::getline(raw_pain_csv, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 5) bad_row("raw_pain", line_no, "wrong field count");
    const auto year = csv::parse_int(f[1]);
    const auto ts = csv::parse_int(f[2]);
    const auto hour = csv::parse_int(f[3]);
    const auto score = csv::parse_int(f[4]);
    if (!year || !ts || !hour || !score) bad_row("raw_pain", line_no, "unparseable field");
    const std::string id(f[0]);
    auto& py = data.patients[id][static_cast<int>(*year)];
    py.grid.patient_id = id;
    py.grid.year = static_cast<int>(*year);
    py.raw_pain.push_back({*ts, *hour, static_cast<int>(*score)});
  }
  return data;
}

void save_cohort(const std::string& directory, const CohortDataset& data) {
  std::filesystem::create_directories(directory);
  std::ofstream grid(std::filesystem::path(directory) / "grid.csv", std::ios::binary);
  std::ofstream pain(std::filesystem::path(directory) / "raw_pain.csv", std::ios::binary);
  if (!grid || !pain) throw Error(ErrorCode::Io, "cannot write cohort to " + directory);
  write_grid_csv(grid, data);
  write_raw_pain_csv(pain, data);
}

CohortDataset load_cohort(const std::string& directory) {
  std::ifstream grid(std::filesystem::path(directory) / "grid.csv", std::ios::binary);
  std::ifstream pain(std::filesystem::path(directory) / "raw_pain.csv", std::ios::binary);
  if (!grid || !pain) throw Error(ErrorCode::Io, "cannot read cohort from " + directory);
  return read_cohort(grid, pain);
}

}  // namespace paincast
