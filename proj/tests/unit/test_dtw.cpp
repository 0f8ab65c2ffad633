#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "paincast/dtw.hpp"
#include "paincast/error.hpp"
#include "paincast/rng.hpp"

using namespace paincast;
using dtw::Sequence;

namespace {

Sequence uni(std::vector<double> v) { return Sequence::univariate(v); }

// Minimum over every monotone path of the summed squared differences.
double brute_force_cost(const std::vector<double>& q, const std::vector<double>& c) {
  const std::size_t n = q.size(), m = c.size();
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
    acc += (q[i] - c[j]) * (q[i] - c[j]);
    if (acc >= best) return;
    if (i == n - 1 && j == m - 1) {
      best = acc;
      return;
    }
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, acc);
    if (j + 1 < m) walk(i, j + 1, acc);
    if (i + 1 < n) walk(i + 1, j, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

std::vector<std::vector<double>> all_sequences(std::size_t max_len, int max_value) {
  std::vector<std::vector<double>> out;
  std::vector<double> cur;
  std::function<void()> rec = [&] {
    if (!cur.empty()) out.push_back(cur);
    if (cur.size() == max_len) return;
    for (int v = 0; v <= max_value; ++v) {
      cur.push_back(v);
      rec();
      cur.pop_back();
    }
  };
  rec();
  return out;
}

std::vector<double> random_sequence(Rng& rng, std::size_t max_len) {
  std::vector<double> v(static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(max_len))));
  for (double& x : v) x = static_cast<double>(rng.integer(0, 3));
  return v;
}

}  // namespace

TEST_CASE("local_cost on identical and univariate points") {
  const std::vector<double> three{3}, zero{0}, one{1};
  const std::vector<std::uint8_t> on{1};
  CHECK(dtw::local_cost(three, three, on, on) == 0.0);
  CHECK(dtw::local_cost(zero, one, on, on) == 1.0);
}

TEST_CASE("local_cost rescales by the shared channel count") {
  std::vector<double> x{1, 2, 3, 4, 5, 6, 7};
  std::vector<double> y = x;
  y[3] += 2.0;
  std::vector<std::uint8_t> mx(7, 1), my(7, 1);
  my[0] = 0;
  CHECK(dtw::local_cost(x, y, mx, my) == Catch::Approx(4.0 * 7.0 / 6.0).epsilon(1e-12));
  std::vector<std::uint8_t> none(7, 0);
  CHECK(std::isinf(dtw::local_cost(x, y, mx, none)));
}

TEST_CASE("dtw of a sequence with itself is zero along the diagonal") {
  const Sequence s = uni({1, 4, 2, 2, 0});
  const auto r = dtw::dtw_distance(s, s);
  CHECK(r.distance == 0.0);
  REQUIRE(r.path.steps.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.path.steps[i] == std::pair<std::size_t, std::size_t>{i, i});
}

TEST_CASE("dtw tolerates duplicated points") {
  CHECK(dtw::dtw_distance(uni({1, 2, 3}), uni({1, 2, 2, 3})).distance == 0.0);
}

TEST_CASE("dtw maps two points onto one") {
  CHECK(dtw::dtw_distance(uni({0, 0}), uni({1})).distance == Catch::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("dtw matches exhaustive path enumeration for short sequences") {
  const auto seqs = all_sequences(3, 3);
  for (const auto& q : seqs) {
    for (const auto& c : seqs) {
      const auto r = dtw::dtw_distance(uni(q), uni(c));
      REQUIRE(r.cost == Catch::Approx(brute_force_cost(q, c)).margin(1e-12));
    }
  }
}

TEST_CASE("dtw matches path enumeration on random sequences up to length 6") {
  Rng rng(42);
  for (int trial = 0; trial < 3000; ++trial) {
    const auto q = random_sequence(rng, 6);
    const auto c = random_sequence(rng, 6);
    const auto r = dtw::dtw_distance(uni(q), uni(c));
    REQUIRE(r.cost == Catch::Approx(brute_force_cost(q, c)).margin(1e-12));
    REQUIRE(r.path.valid(q.size(), c.size()));
    REQUIRE(dtw::path_cost(uni(q), uni(c), r.path) == Catch::Approx(r.cost).epsilon(1e-9));
    REQUIRE(r.distance * r.distance == Catch::Approx(r.cost).epsilon(1e-9));
    REQUIRE(dtw::dtw_cost(uni(q), uni(c)) == Catch::Approx(r.cost).margin(1e-12));
    REQUIRE(dtw::dtw_distance(uni(c), uni(q)).distance == Catch::Approx(r.distance).margin(1e-12));
    REQUIRE((r.distance == 0.0) == (brute_force_cost(q, c) == 0.0));
  }
}

TEST_CASE("multivariate paths are valid and their cost adds up") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(12), m = 1 + rng.index(12);
    Sequence q(n, 3), c(m, 3);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < 3; ++ch) q.set(i, ch, rng.normal());
      if (rng.bernoulli(0.3)) q.clear(i, rng.index(2));
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t ch = 0; ch < 3; ++ch) c.set(j, ch, rng.normal());
      if (rng.bernoulli(0.3)) c.clear(j, rng.index(2));
    }
    const auto r = dtw::dtw_distance(q, c);
    REQUIRE(r.path.valid(n, m));
    REQUIRE(dtw::path_cost(q, c, r.path) == Catch::Approx(r.cost).epsilon(1e-9));
  }
}

TEST_CASE("dtw errors") {
  CHECK_THROWS_AS(dtw::dtw_distance(Sequence(), uni({1})), Error);
  Sequence a(2, 2), b(2, 2);
  for (std::size_t i = 0; i < 2; ++i) {
    a.clear(i, 1);
    b.clear(i, 0);
  }
  try {
    dtw::dtw_distance(a, b);
    FAIL("expected IncomparableSeries");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IncomparableSeries);
  }
  CHECK_THROWS_AS(dtw::dtw_distance(Sequence(2, 1), Sequence(2, 3)), Error);
}

TEST_CASE("band width widens to the unconstrained result") {
  const Sequence q = uni({0, 1, 2, 3, 2, 1, 0, 0}), c = uni({0, 0, 0, 1, 2, 3, 2, 1});
  const double free = dtw::dtw_distance(q, c).distance;
  const double banded = dtw::dtw_distance(q, c, {.band_width = 1}).distance;
  CHECK(banded >= free);
  CHECK(dtw::dtw_distance(q, c, {.band_width = 8}).distance == free);
}

TEST_CASE("dba fixed points") {
  const std::vector<Sequence> one{uni({1, 5, 2})};
  const auto r = dtw::dba_barycenter(one, one[0]);
  CHECK(r.centroid == one[0]);
  CHECK(r.objective.back() == 0.0);

  const std::vector<Sequence> twins{uni({3, 1, 4}), uni({3, 1, 4})};
  CHECK(dtw::dba_barycenter(twins, twins[0]).objective.back() == 0.0);
}

TEST_CASE("dba midpoint is stationary") {
  const std::vector<Sequence> s{uni({0, 0, 0}), uni({2, 2, 2})};
  const auto r = dtw::dba_barycenter(s, uni({1, 1, 1}));
  CHECK(r.centroid == uni({1, 1, 1}));
  CHECK(r.objective.front() == 6.0);
  CHECK(r.objective.back() == 6.0);
}

TEST_CASE("dba objective never increases and beats the best medoid") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Sequence> s;
    for (int i = 0; i < 6; ++i) {
      std::vector<double> v(5 + rng.index(6));
      double level = rng.normal();
      for (double& x : v) x = level + 0.5 * rng.normal();
      s.push_back(uni(v));
    }
    const std::size_t med = dtw::medoid(s);
    const auto r = dtw::dba_barycenter(s, s[med], {.max_iter = 15, .tol = 1e-9});
    for (std::size_t i = 1; i < r.objective.size(); ++i) REQUIRE(r.objective[i] <= r.objective[i - 1] + 1e-9);
    REQUIRE(r.objective.back() <= dtw::dba_objective(s, s[med]) + 1e-6);
    REQUIRE(dtw::dba_objective(s, r.centroid) == Catch::Approx(r.objective.back()).epsilon(1e-9));
  }
  CHECK_THROWS_AS(dtw::dba_barycenter(std::vector<Sequence>{}, uni({1})), Error);
}

TEST_CASE("distance matrix is symmetric with a zero diagonal") {
  Rng rng(9);
  std::vector<Sequence> s;
  for (int i = 0; i < 7; ++i) s.push_back(uni(random_sequence(rng, 8)));
  const Matrix d = dtw::distance_matrix(s);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(d(i, i) == 0.0);
    for (std::size_t j = 0; j < s.size(); ++j) {
      CHECK(d(i, j) == d(j, i));
      CHECK(d(i, j) == Catch::Approx(dtw::dtw_distance(s[i], s[j]).distance).margin(1e-12));
    }
  }
}
