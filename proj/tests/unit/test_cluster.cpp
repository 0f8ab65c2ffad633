#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "catch2/catch_amalgamated.hpp"
#include "paincast/cluster.hpp"
#include "paincast/error.hpp"
#include "paincast/ingest.hpp"
#include "paincast/parallel.hpp"
#include "paincast/rng.hpp"
#include "paincast/synth.hpp"

using namespace paincast;
using cluster::Sequence;

namespace {

Sequence uni(std::vector<double> v) { return Sequence::univariate(v); }

struct Planted {
  std::vector<Sequence> series;
  std::vector<int> truth;
};

Planted planted_cohort(int n, std::uint64_t seed) {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.n_patients = n;
  cfg.n_years = 1;
  cfg.seed = seed;
  const SynthCohort c = generate_cohort(cfg);
  const CohortDataset data = interpolate_cohort(c.dataset);
  const ChannelStats st = channel_stats(data);
  Planted p;
  for (const auto& [id, years] : data.patients) {
    p.series.push_back(cluster::reduce_series(years.at(1).grid, st, {.max_len = 40}));
    p.truth.push_back(c.phenotype(id, 1));
  }
  return p;
}

double entropy(const std::map<int, double>& counts, double n) {
  double h = 0.0;
  for (const auto& [_, c] : counts) h -= c / n * std::log(c / n);
  return h;
}

double nmi_oracle(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  std::map<int, double> ca, cb;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1;
    cb[b[i]] += 1;
    joint[{a[i], b[i]}] += 1;
  }
  double mi = 0.0;
  for (const auto& [key, c] : joint) mi += c / n * std::log(c * n / (ca[key.first] * cb[key.second]));
  const double ha = entropy(ca, n), hb = entropy(cb, n);
  if (ha + hb == 0.0) return 1.0;
  return 2.0 * mi / (ha + hb);
}

double silhouette_oracle(const Matrix& d, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> by;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      by[labels[j]].first += d(i, j);
      by[labels[j]].second += 1;
    }
    if (by[labels[i]].second == 0) continue;
    const double a = by[labels[i]].first / by[labels[i]].second;
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, s] : by) {
      if (l != labels[i] && s.second > 0) b = std::min(b, s.first / s.second);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("nmi edge cases and oracle") {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  CHECK(cluster::nmi(a, a) == Catch::Approx(1.0));
  const std::vector<int> constant{0, 0, 0, 0}, balanced{0, 0, 1, 1};
  CHECK(cluster::nmi(constant, balanced) == 0.0);
  CHECK(cluster::nmi(constant, constant) == 1.0);
  const std::vector<int> x{0, 0, 1, 1}, y{0, 1, 1, 1};
  CHECK(cluster::nmi(x, y) == Catch::Approx(nmi_oracle(x, y)).epsilon(1e-12));
  CHECK_THROWS_AS(cluster::nmi(x, std::vector<int>{0, 1}), Error);
}

TEST_CASE("nmi is symmetric and ignores label names") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> a(20), b(20);
    for (auto& v : a) v = static_cast<int>(rng.index(3));
    for (auto& v : b) v = static_cast<int>(rng.index(4));
    const double base = cluster::nmi(a, b);
    REQUIRE(base == Catch::Approx(cluster::nmi(b, a)).margin(1e-12));
    REQUIRE(base == Catch::Approx(nmi_oracle(a, b)).margin(1e-12));
    std::vector<int> renamed = a;
    for (auto& v : renamed) v = 7 - 2 * v;
    REQUIRE(cluster::nmi(renamed, b) == Catch::Approx(base).margin(1e-12));
    REQUIRE(base >= -1e-12);
    REQUIRE(base <= 1.0 + 1e-12);
  }
}

TEST_CASE("purity") {
  const std::vector<int> ref{0, 0, 1};
  CHECK(cluster::purity(ref, ref) == 1.0);
  CHECK(cluster::purity(std::vector<int>{0, 0, 0}, ref) == Catch::Approx(2.0 / 3.0));
  CHECK(cluster::purity(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}) == 0.5);
  // a refinement of the reference is perfectly pure
  CHECK(cluster::purity(std::vector<int>{0, 1, 2, 3}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(cluster::purity(std::vector<int>{5, 5, 9, 9}, std::vector<int>{0, 1, 0, 1}) == 0.5);
}

TEST_CASE("silhouette on a hand-built distance matrix") {
  Matrix d(4, 4);
  const double v[4][4] = {{0, 1, 4, 5}, {1, 0, 3, 6}, {4, 3, 0, 2}, {5, 6, 2, 0}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) d(i, j) = v[i][j];
  const std::vector<int> labels{0, 0, 1, 1};
  const double expected = (3.5 / 4.5 + 3.5 / 4.5 + 1.5 / 3.5 + 3.5 / 5.5) / 4.0;
  CHECK(cluster::silhouette(d, labels) == Catch::Approx(expected).epsilon(1e-12));
  CHECK(cluster::silhouette(d, std::vector<int>{1, 1, 0, 0}) == Catch::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(cluster::silhouette(d, std::vector<int>{0, 0, 0, 0}), Error);
}

TEST_CASE("silhouette agrees with the oracle on random matrices") {
  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 5 + rng.index(8);
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) d(i, j) = d(j, i) = rng.uniform(0.1, 5.0);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 3);
    rng.shuffle(labels);
    REQUIRE(cluster::silhouette(d, labels) == Catch::Approx(silhouette_oracle(d, labels)).margin(1e-12));
  }
}

TEST_CASE("silhouette of two tight far clusters is one") {
  std::vector<Sequence> s{uni({0, 0, 0}), uni({0, 0, 0}), uni({9, 9, 9}), uni({9, 9, 9})};
  CHECK(cluster::silhouette_dtw(s, std::vector<int>{0, 0, 1, 1}) == Catch::Approx(1.0));
}

TEST_CASE("random labels on homogeneous data give silhouette near zero") {
  double sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Rng rng(seed);
    std::vector<Sequence> s;
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) {
      std::vector<double> v(10);
      for (double& x : v) x = rng.normal();
      s.push_back(uni(v));
      labels.push_back(i % 2);
    }
    rng.shuffle(labels);
    const double value = cluster::silhouette_dtw(s, labels);
    REQUIRE(std::abs(value) <= 0.15);
    sum += value;
  }
  CHECK(std::abs(sum / 50.0) <= 0.05);
}

TEST_CASE("kmeans with one cluster or one series per cluster") {
  Rng rng(4);
  std::vector<Sequence> s;
  for (int i = 0; i < 5; ++i) s.push_back(uni({rng.normal(), rng.normal(), rng.normal(), rng.normal()}));
  const auto one = cluster::kmeans_dtw(s, {.k = 1, .n_init = 1, .seed = 3});
  for (int l : one.labels) CHECK(l == 0);
  CHECK(one.inertia == Catch::Approx(dtw::dba_objective(s, one.centroids[0])).epsilon(1e-9));

  const auto all = cluster::kmeans_dtw(s, {.k = 5, .n_init = 1, .seed = 3});
  CHECK(all.inertia == Catch::Approx(0.0).margin(1e-12));
  std::vector<int> sorted = all.labels;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4});

  CHECK_THROWS_AS(cluster::kmeans_dtw(s, {.k = 6}), Error);
}

TEST_CASE("kmeans inertia is monotone and the best restart wins") {
  const Planted p = planted_cohort(24, 5);
  const auto m = cluster::kmeans_dtw(p.series, {.k = 3, .n_init = 4, .seed = 11});
  for (std::size_t i = 1; i < m.inertia_trace.size(); ++i) CHECK(m.inertia_trace[i] <= m.inertia_trace[i - 1] + 1e-9);
  CHECK(m.inertia == *std::min_element(m.restart_inertia.begin(), m.restart_inertia.end()));
  CHECK(m.labels.size() == p.series.size());
}

TEST_CASE("kmeans is deterministic across thread counts") {
  const Planted p = planted_cohort(18, 6);
  set_thread_count(1);
  const auto a = cluster::kmeans_dtw(p.series, {.k = 3, .n_init = 2, .seed = 9});
  set_thread_count(4);
  const auto b = cluster::kmeans_dtw(p.series, {.k = 3, .n_init = 2, .seed = 9});
  set_thread_count(0);
  CHECK(a.labels == b.labels);
  CHECK(a.inertia == b.inertia);
}

TEST_CASE("kmeans recovers planted phenotypes") {
  const Planted p = planted_cohort(30, 12);
  const auto m = cluster::kmeans_dtw(p.series, {.k = 3, .n_init = 3, .seed = 1});
  CHECK(cluster::nmi(m.labels, p.truth) >= 0.9);
}

TEST_CASE("select_k picks the planted k") {
  const Planted p = planted_cohort(30, 12);
  const std::vector<std::size_t> ks{2, 3, 4, 5, 6};
  const auto r = cluster::select_k(p.series, ks, {.n_init = 2, .seed = 1}, p.truth);
  CHECK(r.best_k == 3);
  REQUIRE(r.rows.size() == ks.size());
  for (const auto& row : r.rows) {
    CHECK(row.nmi.has_value());
    CHECK(row.purity.has_value());
  }
  const std::vector<std::size_t> two{2};
  CHECK(cluster::select_k(p.series, two, {.n_init = 1, .seed = 1}).best_k == 2);
}

TEST_CASE("hungarian matches brute force") {
  Rng rng(8);
  for (int t = 0; t < 40; ++t) {
    const std::size_t n = 1 + rng.index(5);
    Matrix c(n, n);
    for (double& v : c.data) v = rng.uniform(0, 10);
    const auto a = cluster::hungarian(c);
    double got = 0.0;
    for (std::size_t i = 0; i < n; ++i) got += c(i, a[i]);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += c(i, perm[i]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    REQUIRE(got == Catch::Approx(best).margin(1e-9));
  }
}

TEST_CASE("align_from_costs on a diagonal cost matrix") {
  Matrix c(3, 3, 9.0);
  for (int i = 0; i < 3; ++i) c(i, i) = 1.0;
  const auto a = cluster::align_from_costs(c);
  CHECK(a.permutation == std::vector<int>{0, 1, 2});
  CHECK(a.cost == 3.0);
}

TEST_CASE("align_labels inverts a known permutation") {
  cluster::ClusterModel prev;
  prev.centroids = {uni({0, 0}), uni({5, 5}), uni({-4, 2}), uni({10, -3})};
  prev.ids = {"a", "b", "c", "d", "e"};
  prev.labels = {0, 1, 2, 3, 1};
  CHECK(cluster::align_labels(prev, prev).permutation == std::vector<int>{0, 1, 2, 3});

  const std::vector<int> sigma{2, 0, 3, 1};
  const auto next = cluster::relabel(prev, sigma);
  CHECK(next.labels == std::vector<int>{2, 0, 3, 1, 0});
  const auto back = cluster::align_labels(prev, next);
  std::vector<int> inverse(4);
  for (int j = 0; j < 4; ++j) inverse[sigma[j]] = j;
  CHECK(back.permutation == inverse);
  CHECK(cluster::relabel(next, back.permutation).labels == prev.labels);
  CHECK(back.cost == 0.0);

  cluster::ClusterModel small;
  small.centroids = {uni({0})};
  CHECK_THROWS_AS(cluster::align_labels(prev, small), Error);
}

TEST_CASE("chained alignments compose") {
  cluster::ClusterModel y1;
  y1.centroids = {uni({0, 0}), uni({5, 5}), uni({-4, 2})};
  y1.labels = {0, 1, 2};
  const auto y2 = cluster::relabel(y1, std::vector<int>{1, 2, 0});
  const auto y3 = cluster::relabel(y1, std::vector<int>{2, 1, 0});
  const auto y2a = cluster::relabel(y2, cluster::align_labels(y1, y2).permutation);
  const auto y3a = cluster::relabel(y3, cluster::align_labels(y2a, y3).permutation);
  const auto y3b = cluster::relabel(y3, cluster::align_labels(y1, y3).permutation);
  CHECK(y3a.labels == y3b.labels);
  CHECK(y3a.labels == y1.labels);
}

TEST_CASE("reduce_series bounds length and fills sparse channels") {
  GriddedSeries g;
  g.patient_id = "p";
  g.append_visit(0, 500);
  for (std::size_t r = 0; r < 500; ++r) g.set(r, Channel::Pulse, static_cast<double>(r), CellState::Observed);
  g.set(3, Channel::Temp, 37.0, CellState::Observed);
  ChannelStats st;
  st.sd.fill(1.0);
  const Sequence s = cluster::reduce_series(g, st, {.max_len = 50});
  CHECK(s.length() == 50);
  for (std::size_t i = 0; i < s.length(); ++i) {
    CHECK(s.observed(i, index_of(Channel::Pulse)));
    CHECK(s.observed(i, index_of(Channel::Temp)));
    CHECK_FALSE(s.observed(i, index_of(Channel::SpO2)));
  }
  CHECK(s.value(0, index_of(Channel::Pulse)) == Catch::Approx(4.5));
  const Sequence raw = cluster::reduce_series(g, st, {.max_len = 50, .fill_gaps = false});
  CHECK_FALSE(raw.observed(10, index_of(Channel::Temp)));
  const Sequence no_pain = cluster::reduce_series(g, st, {.max_len = 50, .include_pain = false});
  CHECK(no_pain.channels() == kVitalCount);
}

TEST_CASE("pain bands") {
  CHECK(cluster::pain_band(0.0) == 0);
  CHECK(cluster::pain_band(0.4) == 0);
  CHECK(cluster::pain_band(1.0) == 1);
  CHECK(cluster::pain_band(3.4) == 1);
  CHECK(cluster::pain_band(3.6) == 2);
  CHECK(cluster::pain_band(7.0) == 2);
  CHECK(cluster::pain_band(8.0) == 3);
  CHECK(cluster::pain_band(10.0) == 3);
}

TEST_CASE("cluster model json round trip") {
  const Planted p = planted_cohort(9, 2);
  auto m = cluster::kmeans_dtw(p.series, {.k = 2, .n_init = 1, .seed = 4});
  m.ids.assign(p.series.size(), "x");
  const auto back = cluster::cluster_model_from_json(cluster::to_json(m));
  CHECK(back.labels == m.labels);
  CHECK(back.centroids == m.centroids);
  CHECK(back.inertia == m.inertia);
}
