#include <algorithm>
#include <cmath>
#include <numeric>

#include "catch2/catch_amalgamated.hpp"
#include "paincast/error.hpp"
#include "paincast/eval.hpp"
#include "paincast/forest.hpp"
#include "paincast/parallel.hpp"
#include "paincast/rng.hpp"

using namespace paincast;
using namespace paincast::forest;

namespace {

struct Data {
  Matrix x;
  std::vector<double> y;
};

Data linear_task(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Data d{Matrix(n, 4), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 4; ++c) d.x(i, c) = rng.uniform(-2, 2);
    d.y[i] = d.x(i, 0) + 0.1 * rng.normal();
  }
  return d;
}

struct Blobs {
  Matrix x;
  std::vector<int> y;
};

Blobs blobs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b{Matrix(n, 3), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    b.y[i] = static_cast<int>(i % 2);
    const double centre = b.y[i] ? 2.0 : -2.0;
    for (std::size_t c = 0; c < 3; ++c) b.x(i, c) = centre + 0.7 * rng.normal();
  }
  return b;
}

}  // namespace

TEST_CASE("constant targets give constant predictions") {
  const Data d = linear_task(50, 1);
  const std::vector<double> y(50, 3.25);
  const Forest f = rf_fit_regress(d.x, y, {.n_trees = 10, .seed = 2});
  for (double p : rf_predict_regress(f, d.x)) CHECK(p == 3.25);
}

TEST_CASE("a single unrestricted tree memorises unique rows") {
  const Data d = linear_task(80, 2);
  const Forest f = rf_fit_regress(d.x, d.y,
                                  {.n_trees = 1, .min_samples_leaf = 1, .max_features = 4, .bootstrap = false, .seed = 1});
  CHECK(rf_predict_regress(f, d.x) == d.y);
}

TEST_CASE("regression beats the mean predictor") {
  const Data train = linear_task(500, 3), test = linear_task(200, 4);
  const Forest f = rf_fit_regress(train.x, train.y, {.n_trees = 50, .seed = 5});
  const auto pred = rf_predict_regress(f, test.x);
  const double mean = std::accumulate(train.y.begin(), train.y.end(), 0.0) / train.y.size();
  const std::vector<double> flat(test.y.size(), mean);
  CHECK(eval::mae(pred, test.y) < 0.5 * eval::mae(flat, test.y));
}

TEST_CASE("predictions stay inside the training range") {
  const Data train = linear_task(100, 6);
  const Forest f = rf_fit_regress(train.x, train.y, {.n_trees = 20, .seed = 1});
  Rng rng(7);
  Matrix far(30, 4);
  for (double& v : far.data) v = rng.uniform(-50, 50);
  const auto [lo, hi] = std::minmax_element(train.y.begin(), train.y.end());
  for (double p : rf_predict_regress(f, far)) {
    CHECK(p >= *lo);
    CHECK(p <= *hi);
  }
}

TEST_CASE("tree order does not matter") {
  const Data d = linear_task(120, 8);
  Forest f = rf_fit_regress(d.x, d.y, {.n_trees = 15, .seed = 3});
  const auto before = rf_predict_regress(f, d.x);
  std::reverse(f.trees.begin(), f.trees.end());
  const auto after = rf_predict_regress(f, d.x);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == Catch::Approx(before[i]).margin(1e-12));
}

TEST_CASE("forests are deterministic across thread counts") {
  const Data d = linear_task(150, 9);
  set_thread_count(1);
  const auto a = to_json(rf_fit_regress(d.x, d.y, {.n_trees = 12, .seed = 4}));
  set_thread_count(3);
  const auto b = to_json(rf_fit_regress(d.x, d.y, {.n_trees = 12, .seed = 4}));
  set_thread_count(0);
  CHECK(a == b);
}

TEST_CASE("duplicating a training row never raises its error") {
  Data d = linear_task(60, 10);
  const ForestConfig cfg{.n_trees = 1, .min_samples_leaf = 2, .max_features = 4, .bootstrap = false, .seed = 1};
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t i = rng.index(d.y.size());
    const Forest f = rf_fit_regress(d.x, d.y, cfg);
    Matrix row(1, 4);
    for (std::size_t c = 0; c < 4; ++c) row(0, c) = d.x(i, c);
    const double before = std::abs(rf_predict_regress(f, row)[0] - d.y[i]);
    Matrix x2(d.x.rows + 1, 4);
    std::copy(d.x.data.begin(), d.x.data.end(), x2.data.begin());
    for (std::size_t c = 0; c < 4; ++c) x2(d.x.rows, c) = d.x(i, c);
    auto y2 = d.y;
    y2.push_back(d.y[i]);
    const Forest g = rf_fit_regress(x2, y2, cfg);
    REQUIRE(std::abs(rf_predict_regress(g, row)[0] - d.y[i]) <= before + 1e-12);
  }
}

TEST_CASE("out-of-bag error tracks held-out error") {
  const Data train = linear_task(400, 12), test = linear_task(200, 13);
  const Forest f = rf_fit_regress(train.x, train.y, {.n_trees = 60, .oob = true, .seed = 2});
  REQUIRE(f.oob_error.has_value());
  CHECK(std::abs(*f.oob_error - eval::mae(rf_predict_regress(f, test.x), test.y)) <= 0.15);

  const Blobs bt = blobs(300, 14), bh = blobs(200, 15);
  const Forest c = rf_fit_classify(bt.x, bt.y, {.n_trees = 60, .oob = true, .seed = 2});
  const auto pred = rf_predict_classify(c, bh.x);
  double err = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) err += pred[i] != bh.y[i];
  REQUIRE(c.oob_error.has_value());
  CHECK(std::abs(*c.oob_error - err / pred.size()) <= 0.15);
}

TEST_CASE("classification separates blobs") {
  const Blobs train = blobs(200, 16), test = blobs(200, 17);
  const Forest f = rf_fit_classify(train.x, train.y, {.n_trees = 50, .seed = 1});
  const auto pred = rf_predict_classify(f, test.x);
  double right = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) right += pred[i] == test.y[i];
  CHECK(right / pred.size() >= 0.95);
  const Matrix s = rf_scores(f, test.x);
  std::vector<double> pos(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i) {
    REQUIRE(s(i, 0) + s(i, 1) == Catch::Approx(1.0).margin(1e-12));
    pos[i] = s(i, 1);
  }
  CHECK(eval::auroc_binary(pos, test.y) >= 0.98);
}

TEST_CASE("flipping two labels swaps score columns") {
  const Blobs b = blobs(120, 18);
  auto flipped = b.y;
  for (int& v : flipped) v = 1 - v;
  const ForestConfig cfg{.n_trees = 25, .seed = 6};
  const Matrix s = rf_scores(rf_fit_classify(b.x, b.y, cfg), b.x);
  const Matrix t = rf_scores(rf_fit_classify(b.x, flipped, cfg), b.x);
  for (std::size_t i = 0; i < s.rows; ++i) {
    CHECK(s(i, 0) == t(i, 1));
    CHECK(s(i, 1) == t(i, 0));
  }
}

TEST_CASE("forest errors and config") {
  const Blobs b = blobs(10, 19);
  CHECK_THROWS_AS(rf_fit_classify(b.x, std::vector<int>(10, 1), {}), Error);
  CHECK_THROWS_AS(rf_fit_regress(Matrix(0, 3), std::vector<double>{}, {}), Error);
  CHECK_THROWS_AS(rf_fit_regress(b.x, std::vector<double>(3, 1.0), {}), Error);
  const Forest f = rf_fit_classify(b.x, b.y, {.n_trees = 3});
  CHECK_THROWS_AS(rf_scores(f, Matrix(2, 5)), Error);
  const ForestConfig cfg;
  CHECK(cfg.features_per_split(Task::Regression, 10) == 4);
  CHECK(cfg.features_per_split(Task::Classification, 10) == 4);
  CHECK(cfg.features_per_split(Task::Classification, 9) == 3);
  CHECK_THROWS_AS(ForestConfig{.n_trees = 0}.validate(), Error);
  CHECK_THROWS_AS(ForestConfig{.min_samples_leaf = 0}.validate(), Error);
}

TEST_CASE("forest json round trip") {
  const Blobs b = blobs(60, 20);
  const Forest f = rf_fit_classify(b.x, b.y, {.n_trees = 5, .seed = 9}, 3);
  const Forest g = forest_from_json(nlohmann::json::parse(to_json(f).dump()));
  CHECK(rf_scores(f, b.x) == rf_scores(g, b.x));
  CHECK(g.n_classes == 3);
}
