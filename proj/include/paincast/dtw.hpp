#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "paincast/matrix.hpp"

namespace paincast::dtw {

/// Multichannel sequence with a per-cell observedness mask.
class Sequence {
 public:
  Sequence() = default;
  Sequence(std::size_t length, std::size_t channels);

  static Sequence univariate(std::span<const double> values);

  std::size_t length() const noexcept { return length_; }
  std::size_t channels() const noexcept { return channels_; }
  bool empty() const noexcept { return length_ == 0; }

  double value(std::size_t i, std::size_t c) const { return values_[i * channels_ + c]; }
  bool observed(std::size_t i, std::size_t c) const { return observed_[i * channels_ + c] != 0; }
  std::span<const double> values(std::size_t i) const { return {values_.data() + i * channels_, channels_}; }
  std::span<const std::uint8_t> mask(std::size_t i) const { return {observed_.data() + i * channels_, channels_}; }

  void set(std::size_t i, std::size_t c, double v);
  void clear(std::size_t i, std::size_t c);

  friend bool operator==(const Sequence&, const Sequence&) = default;

 private:
  std::size_t length_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> observed_;
};

/// Squared Euclidean distance over channels observed in both vectors, scaled
/// by (channels / shared). Returns +infinity when no channel is shared.
double local_cost(std::span<const double> x, std::span<const double> y, std::span<const std::uint8_t> mask_x,
                  std::span<const std::uint8_t> mask_y);

/// Monotone alignment from (0,0) to (n-1,m-1); steps are (+1,0), (0,+1) or
/// (+1,+1). Indices are 0-based.
struct WarpingPath {
  std::vector<std::pair<std::size_t, std::size_t>> steps;

  bool valid(std::size_t n, std::size_t m) const;
};

struct DtwResult {
  double distance = 0.0;  // sqrt(cost)
  double cost = 0.0;      // accumulated local cost e(n, m)
  WarpingPath path;
  std::optional<Matrix> accumulated;  // e(i, j), kept on request
};

struct DtwOptions {
  /// Sakoe-Chiba half-width; unset means the unconstrained recurrence.
  std::optional<std::size_t> band_width;
  bool keep_matrix = false;
};

/// e(i,j) = d(i,j) + min(e(i-1,j-1), e(i,j-1), e(i-1,j)); distance = sqrt(e(n,m)).
/// Backtracking prefers the diagonal, then (i, j-1), then (i-1, j).
/// Throws EmptySequence, IncomparableSeries (no finite alignment) or
/// ShapeMismatch (channel counts differ).
DtwResult dtw_distance(const Sequence& q, const Sequence& c, const DtwOptions& options = {});

/// Accumulated cost only (no path), O(m) memory.
double dtw_cost(const Sequence& q, const Sequence& c, std::optional<std::size_t> band_width = std::nullopt);

/// Sum of local costs along a path.
double path_cost(const Sequence& q, const Sequence& c, const WarpingPath& path);

struct DbaOptions {
  std::size_t max_iter = 10;
  double tol = 1e-6;
  std::optional<std::size_t> band_width;
};

struct DbaResult {
  Sequence centroid;
  /// Sum of squared DTW distances: entry 0 for the initial centroid, then one
  /// entry per completed iteration. Non-increasing.
  std::vector<double> objective;
  std::size_t iterations = 0;
};

/// DTW barycenter averaging. Each iteration aligns every series to the
/// centroid and replaces each centroid cell by the mean of the aligned
/// observed values, weighted by each aligned point's masking scale so the
/// update minimises the objective for the fixed alignments. Centroid cells
/// that receive no observation keep their previous value. Missing cells of
/// `init` start at 0. Stops when the relative decrease is below `tol` or
/// after `max_iter` iterations. Throws EmptyClusterInput.
DbaResult dba_barycenter(std::span<const Sequence> series, const Sequence& init, const DbaOptions& options = {});

/// Sum over series of squared DTW distance to `centroid`.
double dba_objective(std::span<const Sequence> series, const Sequence& centroid,
                     std::optional<std::size_t> band_width = std::nullopt);

/// Index of the series minimising the objective when used as the centroid.
std::size_t medoid(std::span<const Sequence> series, std::optional<std::size_t> band_width = std::nullopt);

/// Pairwise DTW distances (symmetric, zero diagonal), computed in parallel.
Matrix distance_matrix(std::span<const Sequence> series, std::optional<std::size_t> band_width = std::nullopt);

}  // namespace paincast::dtw
