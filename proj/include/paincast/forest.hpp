#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "paincast/matrix.hpp"

namespace paincast::forest {

enum class Task { Regression, Classification };

struct ForestConfig {
  std::size_t n_trees = 100;
  std::optional<std::size_t> max_depth;     // unlimited when unset
  std::size_t min_samples_leaf = 2;
  std::optional<std::size_t> max_features;  // ceil(p/3) regression, ceil(sqrt(p)) classification
  bool bootstrap = true;
  bool oob = false;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t features_per_split(Task task, std::size_t n_features) const;
};

nlohmann::json to_json(const ForestConfig& c);
ForestConfig forest_config_from_json(const nlohmann::json& j);

struct Node {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;     // x[feature] <= threshold
  int right = -1;
  /// Leaf payload: {mean} for regression, per-class vote shares for
  /// classification (ties split equally).
  std::vector<double> value;
};

struct Tree {
  std::vector<Node> nodes;

  const Node& leaf(std::span<const double> row) const;
  std::size_t depth() const;
};

struct Forest {
  Task task = Task::Regression;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  ForestConfig config;
  std::vector<Tree> trees;
  /// MAE (regression) or error rate (classification) over rows with at
  /// least one out-of-bag tree; set when config.oob.
  std::optional<double> oob_error;
};

/// CART regression trees on bootstrap samples, variance-reduction splits.
/// Split ties go to the lowest feature index, then the lowest threshold;
/// thresholds are midpoints of consecutive distinct values. Tree t is grown
/// from derive_seed(seed, {t}). Throws EmptyTrainingSet or ShapeMismatch.
Forest rf_fit_regress(const Matrix& x, std::span<const double> y, const ForestConfig& cfg);

/// Mean of tree predictions. Throws FeatureWidthMismatch.
std::vector<double> rf_predict_regress(const Forest& model, const Matrix& x);

/// Gini splits. Labels in [0, n_classes); n_classes defaults to max label + 1.
/// Throws SingleClass, EmptyTrainingSet or ShapeMismatch.
Forest rf_fit_classify(const Matrix& x, std::span<const int> labels, const ForestConfig& cfg,
                       std::optional<std::size_t> n_classes = std::nullopt);

/// Per-class vote fractions; rows sum to 1. Throws FeatureWidthMismatch.
Matrix rf_scores(const Forest& model, const Matrix& x);

/// Arg-max of rf_scores, lowest class on ties.
std::vector<int> rf_predict_classify(const Forest& model, const Matrix& x);

nlohmann::json to_json(const Forest& f);
Forest forest_from_json(const nlohmann::json& j);

}  // namespace paincast::forest
