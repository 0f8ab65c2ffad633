#include "paincast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "paincast/error.hpp"

namespace paincast::eval {

namespace {

void check(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::LengthMismatch,
                "prediction and truth lengths differ (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
  if (a == 0) throw Error(ErrorCode::Empty, "metric over an empty set");
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
  check(pred.size(), truth.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - truth[i]);
  return sum / static_cast<double>(pred.size());
}

double r2(std::span<const double> pred, std::span<const double> truth) {
  check(pred.size(), truth.size());
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sse += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    sst += (truth[i] - mean) * (truth[i] - mean);
  }
  if (sst <= 0.0) throw Error(ErrorCode::ConstantTruth, "R^2 is undefined for constant truth");
  return 1.0 - sse / sst;
}

double auroc_binary(std::span<const double> scores, std::span<const int> labels) {
  check(scores.size(), labels.size());
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks (1-based) over tie groups, accumulated for positives.
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw Error(ErrorCode::SingleClass, "AUROC needs both classes");
  const double p = static_cast<double>(positives);
  const double q = static_cast<double>(negatives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

MacroAuroc auroc_macro_detail(const Matrix& scores, std::span<const int> labels) {
  check(scores.rows, labels.size());
  const std::size_t k = scores.cols;
  std::vector<std::size_t> counts(k, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw Error(ErrorCode::LengthMismatch, "label " + std::to_string(l) + " outside the score columns");
    }
    ++counts[static_cast<std::size_t>(l)];
  }
  MacroAuroc out;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) {
      out.classes_used.push_back(static_cast<int>(c));
    } else {
      out.classes_skipped.push_back(static_cast<int>(c));
    }
  }
  if (out.classes_used.size() < 2) throw Error(ErrorCode::SingleClass, "macro AUROC needs at least two classes");
  std::vector<double> column(scores.rows);
  std::vector<int> binary(scores.rows);
  double sum = 0.0;
  for (int c : out.classes_used) {
    for (std::size_t i = 0; i < scores.rows; ++i) {
      column[i] = scores(i, static_cast<std::size_t>(c));
      binary[i] = labels[i] == c ? 1 : 0;
    }
    const double a = auroc_binary(column, binary);
    out.per_class.push_back(a);
    sum += a;
  }
  out.value = sum / static_cast<double>(out.classes_used.size());
  return out;
}

double auroc_macro(const Matrix& scores, std::span<const int> labels) {
  return auroc_macro_detail(scores, labels).value;
}

}  // namespace paincast::eval
