#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "paincast/matrix.hpp"

namespace paincast::eval {

/// Throws LengthMismatch or Empty.
double mae(std::span<const double> pred, std::span<const double> truth);

/// 1 - SSE/SST. Throws LengthMismatch, Empty or ConstantTruth.
double r2(std::span<const double> pred, std::span<const double> truth);

/// Mann-Whitney form: P(score of a positive > score of a negative), ties
/// counted as one half. Exact for any input. Throws SingleClass.
double auroc_binary(std::span<const double> scores, std::span<const int> labels);

struct MacroAuroc {
  double value = 0.0;
  std::vector<int> classes_used;
  std::vector<int> classes_skipped;  // in [0, K) but absent from labels
  std::vector<double> per_class;     // parallel to classes_used
};

inline constexpr std::string_view kAurocVariant = "macro-ovr";

/// Unweighted mean of one-vs-rest AUROC over the classes present in labels.
/// scores is N x K. Throws SingleClass or LengthMismatch.
MacroAuroc auroc_macro_detail(const Matrix& scores, std::span<const int> labels);
double auroc_macro(const Matrix& scores, std::span<const int> labels);

}  // namespace paincast::eval
