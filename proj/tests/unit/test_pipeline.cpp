#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "catch2/catch_amalgamated.hpp"
#include "paincast/error.hpp"
#include "paincast/ingest.hpp"
#include "paincast/pipeline.hpp"
#include "paincast/report.hpp"
#include "paincast/synth.hpp"

using namespace paincast;
using namespace paincast::pipeline;
namespace fs = std::filesystem;

namespace {

std::vector<WindowSample> samples_for(const std::string& id, std::size_t n) {
  std::vector<WindowSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    WindowSample s;
    s.patient_id = id;
    s.year = 1;
    s.end_hour = static_cast<Hour>(10 * i);
    s.horizon = 1;
    out.push_back(s);
  }
  return out;
}

// One 30-hour visit from hour 100. Pain is on the grid everywhere (value 9)
// but raw scores exist only at hours 110 and 127.
CohortDataset tiny_cohort() {
  PatientYear py;
  py.grid.patient_id = "p1";
  py.grid.append_visit(100, 30);
  for (std::size_t r = 0; r < 30; ++r) {
    for (Channel c : kAllChannels) py.grid.set(r, c, 9.0, CellState::Observed);
  }
  py.raw_pain.push_back({110 * 60, 110, 3});
  py.raw_pain.push_back({127 * 60, 127, 6});
  CohortDataset d;
  d.patients["p1"][1] = py;
  return d;
}

CohortDataset small_synth(int patients, int years, std::uint64_t seed) {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.n_patients = patients;
  cfg.n_years = years;
  cfg.seed = seed;
  return interpolate_cohort(generate_cohort(cfg).dataset);
}

ShortTermConfig quick_short_term() {
  ShortTermConfig cfg;
  cfg.horizons = {1};
  cfg.models = {"rf", "arima", "mlp"};
  cfg.runs = 3;
  cfg.stride = 4;
  cfg.forest.n_trees = 8;
  cfg.mlp_train.epochs = 5;
  return cfg;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("paincast_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("individualized split takes the first eighty percent") {
  auto s = samples_for("a", 10);
  const auto b = samples_for("b", 3);
  const auto c = samples_for("c", 1);
  s.insert(s.end(), b.begin(), b.end());
  s.insert(s.end(), c.begin(), c.end());
  const auto split = build_windows(s, Scenario::Individualized, {}, 1);
  REQUIRE(split.groups.size() == 2);
  CHECK(split.groups[0].name == "a");
  CHECK(split.groups[0].train.size() == 8);
  CHECK(split.groups[0].test.size() == 2);
  CHECK(split.groups[1].train.size() == 2);
  CHECK(split.groups[1].test.size() == 1);
  CHECK(split.skipped == std::vector<std::string>{"c"});
  CHECK(split.train_cutoff.at("a") == 70);
  const auto two = build_windows(samples_for("d", 2), Scenario::Individualized, {}, 1);
  CHECK(two.groups[0].train.size() == 1);
  CHECK(two.groups[0].test.size() == 1);
}

TEST_CASE("no training sample ends after a test sample of the same patient") {
  std::vector<WindowSample> s;
  for (int p = 0; p < 12; ++p) {
    const auto more = samples_for("p" + std::to_string(p), 5 + p);
    s.insert(s.end(), more.begin(), more.end());
  }
  std::reverse(s.begin(), s.end());
  for (Scenario sc : {Scenario::Individualized, Scenario::Mixed}) {
    const auto split = build_windows(s, sc, {}, 7);
    std::size_t total = 0;
    for (const auto& g : split.groups) {
      total += g.train.size() + g.test.size();
      for (const auto& t : g.test) {
        for (const auto& tr : g.train) {
          if (tr.patient_id == t.patient_id) REQUIRE(tr.end_hour < t.end_hour);
        }
        REQUIRE(split.train_cutoff.at(t.patient_id) < t.end_hour);
      }
    }
    CHECK(total == s.size());
  }
}

TEST_CASE("mixed split holds out the drawn patients only") {
  std::vector<WindowSample> s;
  std::vector<std::string> ids;
  for (int p = 0; p < 10; ++p) {
    ids.push_back("p" + std::to_string(p));
    const auto more = samples_for(ids.back(), 10);
    s.insert(s.end(), more.begin(), more.end());
  }
  const auto split = build_windows(s, Scenario::Mixed, {}, 3);
  REQUIRE(split.groups.size() == 1);
  const auto drawn = draw_test_patients(ids, 0.5, 3);
  CHECK(drawn.size() == 5);
  const std::set<std::string> drawn_set(drawn.begin(), drawn.end());
  std::set<std::string> test_ids;
  for (const auto& t : split.groups[0].test) test_ids.insert(t.patient_id);
  CHECK(test_ids == drawn_set);
  CHECK(split.groups[0].test.size() == 10);
  CHECK(split.groups[0].train.size() == 90);
  CHECK(draw_test_patients(ids, 0.5, 3) == drawn);
  CHECK_THROWS_AS(build_windows(s, Scenario::Mixed, {.train_fraction = 1.0}, 3), Error);
}

TEST_CASE("windows need a raw pain score at the horizon") {
  const CohortDataset d = tiny_cohort();
  const auto h1 = enumerate_windows(d, 5, 1);
  REQUIRE(h1.size() == 2);
  CHECK(h1[0].end_hour == 109);
  CHECK(h1[0].row_begin == 5);
  CHECK(h1[0].target == 3);
  CHECK(h1[1].end_hour == 126);
  CHECK(h1[1].target == 6);
  const auto h4 = enumerate_windows(d, 5, 4);
  REQUIRE(h4.size() == 2);
  CHECK(h4[0].end_hour == 106);
  CHECK(h4[1].end_hour == 123);
  CHECK(enumerate_windows(d, 5, 1, 2).size() == 1);
  CHECK(enumerate_windows(d, 40, 1).empty());
  CHECK_THROWS_AS(enumerate_windows(d, 0, 1), Error);
}

TEST_CASE("window features mask interpolation past the last observation") {
  PatientYear py;
  py.grid.patient_id = "p";
  py.grid.append_visit(0, 3);
  py.grid.set(0, Channel::Pulse, 80.0, CellState::Observed);
  py.grid.set(1, Channel::Pulse, 90.0, CellState::Interpolated);
  py.grid.set(2, Channel::Pulse, 100.0, CellState::Observed);
  ChannelStats st;
  st.sd.fill(1.0);
  const std::size_t pulse = index_of(Channel::Pulse);

  const Matrix cut = window_at(py, 0, 2, st);
  CHECK(cut.rows == 2);
  CHECK(cut.cols == kWindowFeatures);
  CHECK(cut(0, pulse) == 80.0);
  CHECK(cut(0, kChannelCount + pulse) == 1.0);
  CHECK(cut(1, pulse) == 0.0);
  CHECK(cut(1, kChannelCount + pulse) == 0.0);

  const Matrix full = window_at(py, 0, 3, st);
  CHECK(full(1, pulse) == 90.0);
  CHECK(full(1, kChannelCount + pulse) == 1.0);
  CHECK_THROWS_AS(window_at(py, 1, 3, st), Error);
}

TEST_CASE("channel statistics stop at the cutoff") {
  PatientYear py;
  py.grid.patient_id = "p";
  py.grid.append_visit(0, 4);
  for (std::size_t r = 0; r < 4; ++r) py.grid.set(r, Channel::Temp, r < 2 ? 36.0 : 40.0, CellState::Observed);
  CohortDataset d;
  d.patients["p"][1] = py;
  const auto st = stats_until(d, {{"p", 1}});
  CHECK(st.mean[index_of(Channel::Temp)] == 36.0);
  CHECK(st.sd[index_of(Channel::Temp)] == 1.0);
  CHECK(stats_until(d, {{"p", 3}}).mean[index_of(Channel::Temp)] == 38.0);
}

TEST_CASE("short-term reports the run with the lowest training objective") {
  const CohortDataset data = small_synth(6, 1, 2);
  ShortTermConfig cfg = quick_short_term();
  cfg.scenarios = {Scenario::Individualized, Scenario::Mixed};
  const auto r = run_short_term(data, cfg);
  for (const auto& cell : r.cells) {
    REQUIRE(cell.ok);
    std::vector<const RunRecord*> runs;
    for (const auto& rec : r.runs) {
      if (rec.scenario == cell.scenario && rec.model == cell.model && rec.horizon == cell.horizon) runs.push_back(&rec);
    }
    if (cell.model == "arima") {
      CHECK(cell.runs == 1);
      continue;
    }
    REQUIRE(runs.size() == 3);
    const auto best = std::min_element(runs.begin(), runs.end(), [](const RunRecord* a, const RunRecord* b) {
      return a->train_objective < b->train_objective;
    });
    CHECK(cell.selected_run == (*best)->run);
    CHECK(cell.selected_mae == (*best)->test_mae);
    CHECK(cell.mae_std.has_value());
  }
  CHECK(r.find(Scenario::Mixed, "rf", 1) != nullptr);
  CHECK(r.find(Scenario::Mixed, "lstm", 1) == nullptr);
}

TEST_CASE("a single run has no spread") {
  const CohortDataset data = small_synth(5, 1, 3);
  ShortTermConfig cfg = quick_short_term();
  cfg.runs = 1;
  cfg.scenarios = {Scenario::Mixed};
  for (const auto& cell : run_short_term(data, cfg).cells) {
    CHECK(cell.ok);
    CHECK_FALSE(cell.mae_std.has_value());
  }
}

TEST_CASE("short-term experiments are deterministic") {
  const CohortDataset data = small_synth(5, 1, 4);
  ShortTermConfig cfg = quick_short_term();
  cfg.models = {"rf", "mlp", "lstm", "cpc-rf", "vae-rf"};
  cfg.runs = 1;
  cfg.scenarios = {Scenario::Mixed};
  cfg.lstm_train.epochs = 1;
  cfg.cpc_train.epochs = 1;
  cfg.vae_train.epochs = 1;
  cfg.max_pretrain_windows = 64;
  CHECK(to_json(run_short_term(data, cfg)).dump() == to_json(run_short_term(data, cfg)).dump());
}

TEST_CASE("short-term config json round trip and validation") {
  ShortTermConfig cfg = quick_short_term();
  cfg.seed = 99;
  const auto back = short_term_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  cfg.models = {"prophet"};
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(scenario_from_string(to_string(Scenario::Individualized)) == Scenario::Individualized);
}

TEST_CASE("long-term with two years scores a single test year") {
  const CohortDataset data = small_synth(15, 2, 5);
  LongTermConfig cfg;
  cfg.k = 3;
  cfg.models = {"mlp", "rf"};
  cfg.reduce.max_len = 20;
  cfg.forest.n_trees = 10;
  cfg.mlp_train.epochs = 20;
  const auto r = run_long_term(data, cfg);
  CHECK(r.years.size() == 2);
  REQUIRE(r.cells.size() == 2);
  for (const auto& c : r.cells) {
    CHECK(c.test_year == 2);
    CHECK(c.ok);
    CHECK(c.auroc >= 0.0);
    CHECK(c.auroc <= 1.0);
  }
  CHECK(r.trajectory.size() == 30);

  const CohortDataset one = small_synth(6, 1, 5);
  CHECK_THROWS_AS(run_long_term(one, cfg), Error);
}

TEST_CASE("reports render tables and charts") {
  const CohortDataset data = small_synth(15, 2, 6);
  LongTermConfig cfg;
  cfg.k = 2;
  cfg.models = {"rf"};
  cfg.reduce.max_len = 20;
  cfg.forest.n_trees = 5;
  const fs::path dir = scratch_dir("report");
  report::write_long_term(dir, run_long_term(data, cfg));
  const auto files = report::render_report(dir, true);
  CHECK(std::find(files.begin(), files.end(), "table_long_term.csv") != files.end());
  for (const auto& f : files) CHECK(fs::exists(dir / f));
  std::ifstream table(dir / "table_long_term.csv");
  std::string header;
  std::getline(table, header);
  CHECK(header.rfind("model", 0) == 0);
  const auto svg = report::line_chart_svg("t", "x", "y", {{"a", {1, 2, 3}, {0.5, std::nan(""), 0.7}}});
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("fingerprints track the data") {
  CohortDataset a = tiny_cohort();
  const std::string f = fingerprint(a);
  CHECK(fingerprint(a) == f);
  a.patients["p1"][1].grid.set(0, Channel::Temp, 37.5, CellState::Observed);
  CHECK(fingerprint(a) != f);
}
