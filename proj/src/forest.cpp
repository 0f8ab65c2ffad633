#include "paincast/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "paincast/error.hpp"
#include "paincast/parallel.hpp"
#include "paincast/rng.hpp"

namespace paincast::forest {

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;
};

class Builder {
 public:
  Builder(const Matrix& x, std::span<const double> y, std::span<const int> labels, Task task, std::size_t n_classes,
          const ForestConfig& cfg, std::size_t mtry, Rng& rng)
      : x_(x), y_(y), labels_(labels), task_(task), k_(n_classes), cfg_(cfg), mtry_(mtry), rng_(rng) {}

  Tree build(std::vector<std::size_t> rows) {
    Tree tree;
    grow(tree, rows, 0);
    return tree;
  }

 private:
  std::vector<double> leaf_value(std::span<const std::size_t> rows) const {
    if (task_ == Task::Regression) {
      double s = 0.0;
      for (std::size_t r : rows) s += y_[r];
      return {s / static_cast<double>(rows.size())};
    }
    std::vector<double> counts(k_, 0.0);
    for (std::size_t r : rows) counts[static_cast<std::size_t>(labels_[r])] += 1.0;
    const double top = *std::max_element(counts.begin(), counts.end());
    const auto ties = static_cast<double>(std::count(counts.begin(), counts.end(), top));
    std::vector<double> vote(k_, 0.0);
    for (std::size_t c = 0; c < k_; ++c) vote[c] = counts[c] == top ? 1.0 / ties : 0.0;
    return vote;
  }

  bool pure(std::span<const std::size_t> rows) const {
    for (std::size_t r : rows) {
      if (task_ == Task::Regression ? y_[r] != y_[rows[0]] : labels_[r] != labels_[rows[0]]) return false;
    }
    return true;
  }

  // Score to maximise: sum of squared sums over sizes (regression, equivalent
  // to minimising SSE) or sum of squared class counts over sizes (Gini).
  Split best_split(std::span<const std::size_t> rows) {
    const std::size_t p = x_.cols;
    std::vector<std::size_t> features(p);
    std::iota(features.begin(), features.end(), 0);
    for (std::size_t i = 0; i < mtry_; ++i) std::swap(features[i], features[i + rng_.index(p - i)]);
    features.resize(mtry_);
    std::sort(features.begin(), features.end());

    const std::size_t n = rows.size();
    const std::size_t leaf = cfg_.min_samples_leaf;
    Split best;
    double parent = 0.0;
    if (task_ == Task::Regression) {
      double s = 0.0;
      for (std::size_t r : rows) s += y_[r];
      parent = s * s / static_cast<double>(n);
    } else {
      std::vector<double> counts(k_, 0.0);
      for (std::size_t r : rows) counts[static_cast<std::size_t>(labels_[r])] += 1.0;
      for (double c : counts) parent += c * c;
      parent /= static_cast<double>(n);
    }
    const double min_gain = 1e-12 * (std::abs(parent) + 1.0);
    best.score = parent + min_gain;

    std::vector<std::pair<double, std::size_t>> order(n);
    std::vector<double> left_counts(k_), right_counts(k_), total_counts(k_);
    for (std::size_t f : features) {
      for (std::size_t i = 0; i < n; ++i) order[i] = {x_(rows[i], f), rows[i]};
      std::sort(order.begin(), order.end());
      if (order.front().first == order.back().first) continue;
      double left_sum = 0.0;
      double total_sum = 0.0;
      double left_sq = 0.0;
      double right_sq = 0.0;
      if (task_ == Task::Regression) {
        for (const auto& [v, r] : order) total_sum += y_[r];
      } else {
        std::fill(left_counts.begin(), left_counts.end(), 0.0);
        std::fill(total_counts.begin(), total_counts.end(), 0.0);
        for (const auto& [v, r] : order) total_counts[static_cast<std::size_t>(labels_[r])] += 1.0;
        right_counts = total_counts;
        for (double c : right_counts) right_sq += c * c;
      }
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t r = order[i].second;
        if (task_ == Task::Regression) {
          left_sum += y_[r];
        } else {
          const auto c = static_cast<std::size_t>(labels_[r]);
          left_sq += 2.0 * left_counts[c] + 1.0;
          left_counts[c] += 1.0;
          right_sq -= 2.0 * right_counts[c] - 1.0;
          right_counts[c] -= 1.0;
        }
        const std::size_t nl = i + 1;
        const std::size_t nr = n - nl;
        if (order[i].first == order[i + 1].first || nl < leaf || nr < leaf) continue;
        double score;
        if (task_ == Task::Regression) {
          const double right_sum = total_sum - left_sum;
          score = left_sum * left_sum / static_cast<double>(nl) + right_sum * right_sum / static_cast<double>(nr);
        } else {
          score = left_sq / static_cast<double>(nl) + right_sq / static_cast<double>(nr);
        }
        if (score > best.score) {
          best.score = score;
          best.feature = static_cast<int>(f);
          best.threshold = 0.5 * (order[i].first + order[i + 1].first);
        }
      }
    }
    return best;
  }

  int grow(Tree& tree, std::vector<std::size_t>& rows, std::size_t depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const bool stop = rows.size() < 2 * cfg_.min_samples_leaf || (cfg_.max_depth && depth >= *cfg_.max_depth) ||
                      pure(rows);
    Split split;
    if (!stop) split = best_split(rows);
    if (split.feature < 0) {
      tree.nodes[static_cast<std::size_t>(id)].value = leaf_value(rows);
      return id;
    }
    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) {
      (x_(r, static_cast<std::size_t>(split.feature)) <= split.threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(tree, left, depth + 1);
    const int r = grow(tree, right, depth + 1);
    Node& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  const Matrix& x_;
  std::span<const double> y_;
  std::span<const int> labels_;
  Task task_;
  std::size_t k_;
  const ForestConfig& cfg_;
  std::size_t mtry_;
  Rng& rng_;
};

Forest fit(const Matrix& x, std::span<const double> y, std::span<const int> labels, Task task, std::size_t k,
           const ForestConfig& cfg) {
  cfg.validate();
  const std::size_t n = x.rows;
  Forest f;
  f.task = task;
  f.n_features = x.cols;
  f.n_classes = k;
  f.config = cfg;
  f.trees.resize(cfg.n_trees);
  const std::size_t mtry = cfg.features_per_split(task, x.cols);
  std::vector<std::vector<char>> in_bag(cfg.oob ? cfg.n_trees : 0);
  parallel_for(cfg.n_trees, [&](std::size_t t) {
    Rng rng(derive_seed(cfg.seed, {t}));
    std::vector<std::size_t> rows(n);
    if (cfg.bootstrap) {
      for (auto& r : rows) r = rng.index(n);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    if (cfg.oob) {
      in_bag[t].assign(n, 0);
      for (std::size_t r : rows) in_bag[t][r] = 1;
    }
    Builder builder(x, y, labels, task, k, cfg, mtry, rng);
    f.trees[t] = builder.build(std::move(rows));
  });

  if (cfg.oob) {
    double err = 0.0;
    std::size_t counted = 0;
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<double> acc(task == Task::Regression ? 1 : k, 0.0);
      std::size_t trees = 0;
      for (std::size_t t = 0; t < cfg.n_trees; ++t) {
        if (in_bag[t][r]) continue;
        const Node& leaf = f.trees[t].leaf(x.row(r));
        for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += leaf.value[c];
        ++trees;
      }
      if (trees == 0) continue;
      ++counted;
      if (task == Task::Regression) {
        err += std::abs(acc[0] / static_cast<double>(trees) - y[r]);
      } else {
        const auto pred = std::distance(acc.begin(), std::max_element(acc.begin(), acc.end()));
        err += pred == labels[r] ? 0.0 : 1.0;
      }
    }
    if (counted > 0) f.oob_error = err / static_cast<double>(counted);
  }
  return f;
}

void check_width(const Forest& f, const Matrix& x) {
  if (x.cols != f.n_features) {
    throw Error(ErrorCode::FeatureWidthMismatch, "forest expects " + std::to_string(f.n_features) +
                                                     " features, got " + std::to_string(x.cols));
  }
}

}  // namespace

void ForestConfig::validate() const {
  if (n_trees < 1) throw Error(ErrorCode::InvalidConfig, "n_trees must be >= 1");
  if (min_samples_leaf < 1) throw Error(ErrorCode::InvalidConfig, "min_samples_leaf must be >= 1");
  if (max_features && *max_features < 1) throw Error(ErrorCode::InvalidConfig, "max_features must be >= 1");
}

std::size_t ForestConfig::features_per_split(Task task, std::size_t p) const {
  if (max_features) return std::min(*max_features, p);
  const double raw = task == Task::Regression ? static_cast<double>(p) / 3.0 : std::sqrt(static_cast<double>(p));
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(raw - 1e-12)), 1, std::max<std::size_t>(p, 1));
}

nlohmann::json to_json(const ForestConfig& c) {
  nlohmann::json j{{"n_trees", c.n_trees},
                   {"min_samples_leaf", c.min_samples_leaf},
                   {"bootstrap", c.bootstrap},
                   {"oob", c.oob},
                   {"seed", c.seed}};
  j["max_depth"] = c.max_depth ? nlohmann::json(*c.max_depth) : nlohmann::json(nullptr);
  j["max_features"] = c.max_features ? nlohmann::json(*c.max_features) : nlohmann::json(nullptr);
  return j;
}

ForestConfig forest_config_from_json(const nlohmann::json& j) {
  ForestConfig c;
  if (j.contains("n_trees")) j.at("n_trees").get_to(c.n_trees);
  if (j.contains("min_samples_leaf")) j.at("min_samples_leaf").get_to(c.min_samples_leaf);
  if (j.contains("bootstrap")) j.at("bootstrap").get_to(c.bootstrap);
  if (j.contains("oob")) j.at("oob").get_to(c.oob);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("max_depth") && !j.at("max_depth").is_null()) c.max_depth = j.at("max_depth").get<std::size_t>();
  if (j.contains("max_features") && !j.at("max_features").is_null()) {
    c.max_features = j.at("max_features").get<std::size_t>();
  }
  c.validate();
  return c;
}

const Node& Tree::leaf(std::span<const double> row) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const Node& n = nodes[i];
    i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[i];
}

std::size_t Tree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return best;
}

Forest rf_fit_regress(const Matrix& x, std::span<const double> y, const ForestConfig& cfg) {
  if (x.rows == 0) throw Error(ErrorCode::EmptyTrainingSet, "random forest training set is empty");
  if (x.rows != y.size()) throw Error(ErrorCode::ShapeMismatch, "feature rows and targets differ in count");
  return fit(x, y, {}, Task::Regression, 0, cfg);
}

std::vector<double> rf_predict_regress(const Forest& model, const Matrix& x) {
  check_width(model, x);
  std::vector<double> out(x.rows, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double s = 0.0;
    for (const auto& t : model.trees) s += t.leaf(x.row(r)).value[0];
    out[r] = s / static_cast<double>(model.trees.size());
  }
  return out;
}

Forest rf_fit_classify(const Matrix& x, std::span<const int> labels, const ForestConfig& cfg,
                       std::optional<std::size_t> n_classes) {
  if (x.rows == 0) throw Error(ErrorCode::EmptyTrainingSet, "random forest training set is empty");
  if (x.rows != labels.size()) throw Error(ErrorCode::ShapeMismatch, "feature rows and labels differ in count");
  int max_label = 0;
  for (int l : labels) {
    if (l < 0) throw Error(ErrorCode::ShapeMismatch, "class labels must be non-negative");
    max_label = std::max(max_label, l);
  }
  const std::size_t k = n_classes.value_or(static_cast<std::size_t>(max_label) + 1);
  if (static_cast<std::size_t>(max_label) >= k) throw Error(ErrorCode::ShapeMismatch, "label outside n_classes");
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; })) {
    throw Error(ErrorCode::SingleClass, "classification forest needs at least two classes");
  }
  return fit(x, {}, labels, Task::Classification, k, cfg);
}

Matrix rf_scores(const Forest& model, const Matrix& x) {
  check_width(model, x);
  Matrix out(x.rows, model.n_classes);
  const double n = static_cast<double>(model.trees.size());
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (const auto& t : model.trees) {
      const auto& v = t.leaf(x.row(r)).value;
      for (std::size_t c = 0; c < model.n_classes; ++c) out(r, c) += v[c];
    }
    for (std::size_t c = 0; c < model.n_classes; ++c) out(r, c) /= n;
  }
  return out;
}

std::vector<int> rf_predict_classify(const Forest& model, const Matrix& x) {
  const Matrix s = rf_scores(model, x);
  std::vector<int> out(x.rows, 0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const auto row = s.row(r);
    out[r] = static_cast<int>(std::distance(row.begin(), std::max_element(row.begin(), row.end())));
  }
  return out;
}

nlohmann::json to_json(const Forest& f) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : f.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      if (n.feature < 0) {
        nodes.push_back({{"value", n.value}});
      } else {
        nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
      }
    }
    trees.push_back(nodes);
  }
  nlohmann::json j{{"task", f.task == Task::Regression ? "regression" : "classification"},
                   {"n_features", f.n_features},
                   {"n_classes", f.n_classes},
                   {"config", to_json(f.config)},
                   {"trees", trees}};
  j["oob_error"] = f.oob_error ? nlohmann::json(*f.oob_error) : nlohmann::json(nullptr);
  return j;
}

Forest forest_from_json(const nlohmann::json& j) {
  Forest f;
  f.task = j.at("task").get<std::string>() == "regression" ? Task::Regression : Task::Classification;
  j.at("n_features").get_to(f.n_features);
  j.at("n_classes").get_to(f.n_classes);
  f.config = forest_config_from_json(j.at("config"));
  if (j.contains("oob_error") && !j.at("oob_error").is_null()) f.oob_error = j.at("oob_error").get<double>();
  for (const auto& nodes : j.at("trees")) {
    Tree t;
    for (const auto& n : nodes) {
      Node node;
      if (n.contains("value")) {
        n.at("value").get_to(node.value);
      } else {
        n.at("feature").get_to(node.feature);
        n.at("threshold").get_to(node.threshold);
        n.at("left").get_to(node.left);
        n.at("right").get_to(node.right);
      }
      t.nodes.push_back(std::move(node));
    }
    f.trees.push_back(std::move(t));
  }
  return f;
}

}  // namespace paincast::forest
