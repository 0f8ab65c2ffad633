#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "paincast/datamodel.hpp"
#include "paincast/dtw.hpp"
#include "paincast/matrix.hpp"

namespace paincast::cluster {

using dtw::Sequence;

struct KMeansOptions {
  std::size_t k = 7;
  std::size_t n_init = 3;
  std::size_t max_iter = 20;
  std::size_t dba_iter = 5;
  double tol = 1e-6;
  std::optional<std::size_t> band_width;
  std::uint64_t seed = 1;
};

struct ClusterModel {
  int year = 0;
  std::vector<Sequence> centroids;
  std::vector<std::string> ids;  // item ids, parallel to labels
  std::vector<int> labels;
  double inertia = 0.0;               // sum of squared DTW distances to own centroid
  std::vector<double> inertia_trace;  // per iteration of the winning restart
  std::vector<double> restart_inertia;
  std::uint64_t seed = 0;

  std::size_t k() const noexcept { return centroids.size(); }
};

/// DTW k-means: k-means++ seeding under DTW, nearest-centroid assignment, DBA
/// update warm-started from the current centroid, `n_init` seeded restarts
/// keeping the lowest inertia. An emptied cluster is re-seeded with the series
/// farthest from its centroid. Throws TooFewSeries.
ClusterModel kmeans_dtw(std::span<const Sequence> series, const KMeansOptions& options);

/// 2 I(a;b) / (H(a) + H(b)); 1 when both labelings are a single cluster.
/// Throws LabelSetMismatch.
double nmi(std::span<const int> a, std::span<const int> b);

/// Sum over predicted clusters of the largest overlap with a reference class,
/// divided by N. Throws LabelSetMismatch.
double purity(std::span<const int> predicted, std::span<const int> reference);

/// Mean silhouette from a precomputed distance matrix. Singleton clusters
/// contribute 0. Throws SingleCluster.
double silhouette(const Matrix& distances, std::span<const int> labels);
double silhouette_dtw(std::span<const Sequence> series, std::span<const int> labels,
                      std::optional<std::size_t> band_width = std::nullopt);

struct SelectKRow {
  std::size_t k = 0;
  double silhouette = 0.0;
  std::optional<double> nmi;
  std::optional<double> purity;
  double inertia = 0.0;
};

struct SelectKResult {
  std::size_t best_k = 0;
  std::vector<SelectKRow> rows;
};

/// Runs kmeans_dtw for every k and picks the largest silhouette. NMI and
/// purity are filled in when `reference` is given.
SelectKResult select_k(std::span<const Sequence> series, std::span<const std::size_t> k_range,
                       const KMeansOptions& base, std::span<const int> reference = {});

/// Minimum-cost assignment for a square cost matrix (Hungarian algorithm).
/// Returns assignment[row] = column.
std::vector<std::size_t> hungarian(const Matrix& cost);

struct Alignment {
  /// next label j becomes permutation[j].
  std::vector<int> permutation;
  double cost = 0.0;
};

/// Matches next's centroids to prev's by minimum total DTW distance.
/// Throws KMismatch.
Alignment align_labels(const ClusterModel& prev, const ClusterModel& next);
Alignment align_from_costs(const Matrix& cost);

/// Applies a permutation to labels and centroid order.
ClusterModel relabel(const ClusterModel& model, std::span<const int> permutation);

struct ReduceOptions {
  std::size_t max_len = 200;
  bool include_pain = true;
  /// Blocks without a channel take that channel from the nearest block that
  /// has it, so two reduced series are comparable whenever they share a
  /// channel anywhere in the year.
  bool fill_gaps = true;
};

/// Reduces a patient-year to at most `max_len` points: rows with no present
/// cell are dropped, the rest is cut into equal-stride blocks and each channel
/// is averaged over its present cells. Values are z-normalised with `stats`.
Sequence reduce_series(const GriddedSeries& series, const ChannelStats& stats, const ReduceOptions& options);

/// Band of the rounded mean pain: 0 -> 0, 1-3 -> 1, 4-7 -> 2, 8-10 -> 3.
int pain_band(double mean_pain);

nlohmann::json to_json(const ClusterModel& model);
ClusterModel cluster_model_from_json(const nlohmann::json& j);

}  // namespace paincast::cluster
