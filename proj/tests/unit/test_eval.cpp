#include <cmath>

#include "catch2/catch_amalgamated.hpp"
#include "paincast/error.hpp"
#include "paincast/eval.hpp"
#include "paincast/rng.hpp"

using namespace paincast;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double hits = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      hits += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return hits / pairs;
}

}  // namespace

TEST_CASE("mae and r2") {
  const std::vector<double> truth{1, 2, 3, 4};
  CHECK(eval::mae(truth, truth) == 0.0);
  CHECK(eval::mae(std::vector<double>{2, 2, 2, 2}, truth) == 1.0);
  CHECK(eval::r2(truth, truth) == 1.0);
  CHECK(eval::r2(std::vector<double>{2.5, 2.5, 2.5, 2.5}, truth) == 0.0);
  CHECK(eval::r2(std::vector<double>{4, 3, 2, 1}, truth) == Catch::Approx(1.0 - 20.0 / 5.0));
  CHECK_THROWS_AS(eval::mae(std::vector<double>{1}, truth), Error);
  CHECK_THROWS_AS(eval::mae(std::vector<double>{}, std::vector<double>{}), Error);
  CHECK_THROWS_AS(eval::r2(truth, std::vector<double>{1, 1, 1, 1}), Error);
}

TEST_CASE("binary auroc edge cases") {
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(eval::auroc_binary(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
  CHECK(eval::auroc_binary(std::vector<double>{0.9, 0.8, 0.2, 0.1}, y) == 0.0);
  CHECK(eval::auroc_binary(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
  CHECK_THROWS_AS(eval::auroc_binary(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), Error);
}

TEST_CASE("binary auroc equals pair counting with ties") {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.index(30);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.index(5));
      y[i] = static_cast<int>(rng.index(2));
    }
    y[0] = 0;
    y[1] = 1;
    REQUIRE(eval::auroc_binary(s, y) == Catch::Approx(pairwise_auc(s, y)).margin(1e-12));
  }
}

TEST_CASE("macro auroc skips absent classes") {
  Matrix scores(4, 3);
  const double v[4][3] = {{0.8, 0.1, 0.1}, {0.7, 0.2, 0.1}, {0.1, 0.1, 0.8}, {0.3, 0.3, 0.4}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) scores(i, j) = v[i][j];
  const std::vector<int> labels{0, 0, 2, 2};
  const auto d = eval::auroc_macro_detail(scores, labels);
  CHECK(d.classes_used == std::vector<int>{0, 2});
  CHECK(d.classes_skipped == std::vector<int>{1});
  CHECK(d.value == 1.0);
  CHECK(eval::auroc_macro(scores, labels) == 1.0);
  CHECK_THROWS_AS(eval::auroc_macro(scores, std::vector<int>{1, 1, 1, 1}), Error);
  CHECK(eval::kAurocVariant == "macro-ovr");
}

TEST_CASE("macro auroc is the mean of one-vs-rest values") {
  Rng rng(6);
  Matrix scores(40, 3);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) {
    labels[i] = static_cast<int>(i % 3);
    for (std::size_t k = 0; k < 3; ++k) scores(i, k) = rng.uniform();
  }
  double sum = 0.0;
  for (int k = 0; k < 3; ++k) {
    std::vector<double> s(40);
    std::vector<int> y(40);
    for (std::size_t i = 0; i < 40; ++i) {
      s[i] = scores(i, k);
      y[i] = labels[i] == k;
    }
    sum += pairwise_auc(s, y);
  }
  CHECK(eval::auroc_macro(scores, labels) == Catch::Approx(sum / 3.0).margin(1e-12));
}

TEST_CASE("worked examples") {
  CHECK(eval::mae(std::vector<double>{1, 2}, std::vector<double>{2, 4}) == 1.5);
  CHECK(eval::mae(std::vector<double>{2, 3, 4}, std::vector<double>{1, 2, 3}) == 1.0);
  CHECK(eval::auroc_binary(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
}

TEST_CASE("two-class macro auroc reduces to the binary value") {
  Rng rng(7);
  Matrix scores(50, 2);
  std::vector<int> labels(50);
  std::vector<double> positive(50);
  for (std::size_t i = 0; i < 50; ++i) {
    labels[i] = static_cast<int>(i % 2);
    scores(i, 1) = rng.uniform();
    scores(i, 0) = 1.0 - scores(i, 1);
    positive[i] = scores(i, 1);
  }
  CHECK(eval::auroc_macro(scores, labels) == Catch::Approx(eval::auroc_binary(positive, labels)).margin(1e-12));

  Matrix onehot(6, 3);
  const std::vector<int> y{0, 1, 2, 2, 1, 0};
  for (std::size_t i = 0; i < 6; ++i) onehot(i, y[i]) = 1.0;
  CHECK(eval::auroc_macro(onehot, y) == 1.0);
}

TEST_CASE("random scores give chance-level macro auroc") {
  Rng rng(8);
  Matrix scores(3000, 3);
  std::vector<int> labels(3000);
  for (std::size_t i = 0; i < 3000; ++i) {
    labels[i] = static_cast<int>(i % 3);
    for (std::size_t k = 0; k < 3; ++k) scores(i, k) = rng.uniform();
  }
  CHECK(std::abs(eval::auroc_macro(scores, labels) - 0.5) <= 0.03);
}

TEST_CASE("auroc ignores monotone transforms and matches pair counting") {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.index(199);
    std::vector<double> s(n), warped(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.normal() * 4.0) / 4.0;
      warped[i] = std::exp(3.0 * s[i]) + 1.0;
      y[i] = static_cast<int>(rng.index(2));
    }
    y[0] = 0;
    y[1] = 1;
    const double a = eval::auroc_binary(s, y);
    REQUIRE(a == pairwise_auc(s, y));
    REQUIRE(eval::auroc_binary(warped, y) == a);
  }
}

TEST_CASE("mae and r2 agree with direct sums") {
  Rng rng(10);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.index(100);
    std::vector<double> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.normal();
      y[i] = rng.normal();
    }
    double abs_sum = 0.0, sse = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      abs_sum += std::abs(p[i] - y[i]);
      sse += (p[i] - y[i]) * (p[i] - y[i]);
      mean += y[i];
    }
    mean /= n;
    double sst = 0.0;
    for (double v : y) sst += (v - mean) * (v - mean);
    REQUIRE(eval::mae(p, y) == Catch::Approx(abs_sum / n).margin(1e-12));
    REQUIRE(eval::r2(p, y) == Catch::Approx(1.0 - sse / sst).margin(1e-12));
  }
}
