#include "paincast/dtw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "paincast/error.hpp"
#include "paincast/parallel.hpp"

namespace paincast::dtw {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(const Sequence& q, const Sequence& c) {
  if (q.empty() || c.empty()) throw Error(ErrorCode::EmptySequence, "DTW needs non-empty sequences");
  if (q.channels() != c.channels()) {
    throw Error(ErrorCode::ShapeMismatch, "DTW sequences have different channel counts");
  }
}

std::size_t effective_band(std::size_t n, std::size_t m, std::optional<std::size_t> band) {
  if (!band) return std::max(n, m);
  const std::size_t diff = n > m ? n - m : m - n;
  return std::max(*band, diff);
}

bool in_band(std::size_t i, std::size_t j, std::size_t w) { return (i > j ? i - j : j - i) <= w; }

}  // namespace

Sequence::Sequence(std::size_t length, std::size_t channels)
    : length_(length), channels_(channels), values_(length * channels, 0.0), observed_(length * channels, 1) {}

Sequence Sequence::univariate(std::span<const double> values) {
  Sequence s(values.size(), 1);
  for (std::size_t i = 0; i < values.size(); ++i) s.set(i, 0, values[i]);
  return s;
}

void Sequence::set(std::size_t i, std::size_t c, double v) {
  values_[i * channels_ + c] = v;
  observed_[i * channels_ + c] = 1;
}

void Sequence::clear(std::size_t i, std::size_t c) {
  values_[i * channels_ + c] = 0.0;
  observed_[i * channels_ + c] = 0;
}

double local_cost(std::span<const double> x, std::span<const double> y, std::span<const std::uint8_t> mask_x,
                  std::span<const std::uint8_t> mask_y) {
  double sum = 0.0;
  std::size_t shared = 0;
  for (std::size_t c = 0; c < x.size(); ++c) {
    if (!mask_x[c] || !mask_y[c]) continue;
    const double d = x[c] - y[c];
    sum += d * d;
    ++shared;
  }
  if (shared == 0) return kInf;
  if (shared == x.size()) return sum;
  return sum * static_cast<double>(x.size()) / static_cast<double>(shared);
}

bool WarpingPath::valid(std::size_t n, std::size_t m) const {
  if (steps.empty() || steps.front() != std::pair<std::size_t, std::size_t>{0, 0} ||
      steps.back() != std::pair<std::size_t, std::size_t>{n - 1, m - 1}) {
    return false;
  }
  for (std::size_t k = 1; k < steps.size(); ++k) {
    const auto [i0, j0] = steps[k - 1];
    const auto [i1, j1] = steps[k];
    const bool ok = (i1 == i0 + 1 && j1 == j0) || (i1 == i0 && j1 == j0 + 1) || (i1 == i0 + 1 && j1 == j0 + 1);
    if (!ok) return false;
  }
  return true;
}

DtwResult dtw_distance(const Sequence& q, const Sequence& c, const DtwOptions& options) {
  check_pair(q, c);
  const std::size_t n = q.length();
  const std::size_t m = c.length();
  const std::size_t w = effective_band(n, m, options.band_width);
  Matrix e(n, m, kInf);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!in_band(i, j, w)) continue;
      const double d = local_cost(q.values(i), c.values(j), q.mask(i), c.mask(j));
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else if (i == 0) {
        best = e(0, j - 1);
      } else if (j == 0) {
        best = e(i - 1, 0);
      } else {
        best = std::min({e(i - 1, j - 1), e(i, j - 1), e(i - 1, j)});
      }
      e(i, j) = d + best;
    }
  }
  const double total = e(n - 1, m - 1);
  if (!std::isfinite(total)) {
    throw Error(ErrorCode::IncomparableSeries, "no warping path shares an observed channel at every step");
  }

  DtwResult result;
  result.cost = total;
  result.distance = std::sqrt(total);
  auto& steps = result.path.steps;
  std::size_t i = n - 1;
  std::size_t j = m - 1;
  steps.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = e(i - 1, j - 1);
      const double left = e(i, j - 1);
      const double up = e(i - 1, j);
      if (diag <= left && diag <= up) {
        --i;
        --j;
      } else if (left <= up) {
        --j;
      } else {
        --i;
      }
    }
    steps.emplace_back(i, j);
  }
  std::reverse(steps.begin(), steps.end());
  if (options.keep_matrix) result.accumulated = std::move(e);
  return result;
}

double dtw_cost(const Sequence& q, const Sequence& c, std::optional<std::size_t> band_width) {
  check_pair(q, c);
  const std::size_t n = q.length();
  const std::size_t m = c.length();
  const std::size_t w = effective_band(n, m, band_width);
  std::vector<double> prev(m, kInf), curr(m, kInf);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(curr.begin(), curr.end(), kInf);
    const std::size_t j_lo = i > w ? i - w : 0;
    const std::size_t j_hi = std::min(m - 1, i + w);
    for (std::size_t j = j_lo; j <= j_hi; ++j) {
      const double d = local_cost(q.values(i), c.values(j), q.mask(i), c.mask(j));
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else if (i == 0) {
        best = curr[j - 1];
      } else if (j == 0) {
        best = prev[0];
      } else {
        best = std::min({prev[j - 1], curr[j - 1], prev[j]});
      }
      curr[j] = d + best;
    }
    std::swap(prev, curr);
  }
  const double total = prev[m - 1];
  if (!std::isfinite(total)) {
    throw Error(ErrorCode::IncomparableSeries, "no warping path shares an observed channel at every step");
  }
  return total;
}

double path_cost(const Sequence& q, const Sequence& c, const WarpingPath& path) {
  double sum = 0.0;
  for (const auto& [i, j] : path.steps) sum += local_cost(q.values(i), c.values(j), q.mask(i), c.mask(j));
  return sum;
}

double dba_objective(std::span<const Sequence> series, const Sequence& centroid,
                     std::optional<std::size_t> band_width) {
  std::vector<double> costs(series.size());
  parallel_for(series.size(), [&](std::size_t s) { costs[s] = dtw_cost(series[s], centroid, band_width); });
  double total = 0.0;
  for (double c : costs) total += c;
  return total;
}

namespace {

Sequence filled(const Sequence& init) {
  Sequence out(init.length(), init.channels());
  for (std::size_t i = 0; i < init.length(); ++i) {
    for (std::size_t c = 0; c < init.channels(); ++c) out.set(i, c, init.observed(i, c) ? init.value(i, c) : 0.0);
  }
  return out;
}

}  // namespace

DbaResult dba_barycenter(std::span<const Sequence> series, const Sequence& init, const DbaOptions& options) {
  if (series.empty()) throw Error(ErrorCode::EmptyClusterInput, "DBA needs at least one series");
  if (init.empty()) throw Error(ErrorCode::EmptySequence, "DBA initial centroid is empty");
  const std::size_t channels = init.channels();
  for (const auto& s : series) {
    if (s.channels() != channels) throw Error(ErrorCode::ShapeMismatch, "DBA series differ in channel count");
  }

  DbaResult result;
  result.centroid = filled(init);
  std::vector<DtwResult> alignments(series.size());
  auto align = [&](const Sequence& centroid) {
    parallel_for(series.size(), [&](std::size_t s) {
      DtwOptions opts;
      opts.band_width = options.band_width;
      alignments[s] = dtw_distance(centroid, series[s], opts);
    });
    double total = 0.0;
    for (const auto& a : alignments) total += a.cost;
    return total;
  };

  double objective = align(result.centroid);
  result.objective.push_back(objective);
  const std::size_t n = result.centroid.length();
  for (std::size_t iter = 0; iter < options.max_iter && objective > 0.0; ++iter) {
    std::vector<double> num(n * channels, 0.0), den(n * channels, 0.0);
    for (std::size_t s = 0; s < series.size(); ++s) {
      const Sequence& x = series[s];
      for (const auto& [ci, xj] : alignments[s].path.steps) {
        std::size_t shared = 0;
        for (std::size_t c = 0; c < channels; ++c) shared += x.observed(xj, c) ? 1 : 0;
        if (shared == 0) continue;
        const double weight = static_cast<double>(channels) / static_cast<double>(shared);
        for (std::size_t c = 0; c < channels; ++c) {
          if (!x.observed(xj, c)) continue;
          num[ci * channels + c] += weight * x.value(xj, c);
          den[ci * channels + c] += weight;
        }
      }
    }
    Sequence next = result.centroid;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < channels; ++c) {
        if (den[i * channels + c] > 0.0) next.set(i, c, num[i * channels + c] / den[i * channels + c]);
      }
    }
    const std::vector<DtwResult> previous = alignments;
    const double updated = align(next);
    if (updated > objective) {
      // Rounding at a fixed point; keep the better centroid.
      alignments = previous;
      break;
    }
    const double decrease = objective - updated;
    result.centroid = std::move(next);
    result.objective.push_back(updated);
    ++result.iterations;
    const double previous_objective = objective;
    objective = updated;
    if (decrease <= options.tol * previous_objective) break;
  }
  return result;
}

std::size_t medoid(std::span<const Sequence> series, std::optional<std::size_t> band_width) {
  if (series.empty()) throw Error(ErrorCode::EmptyClusterInput, "medoid of an empty set");
  const Matrix d = distance_matrix(series, band_width);
  std::size_t best = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < series.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < series.size(); ++j) sum += d(i, j) * d(i, j);
    if (sum < best_sum) {
      best_sum = sum;
      best = i;
    }
  }
  return best;
}

Matrix distance_matrix(std::span<const Sequence> series, std::optional<std::size_t> band_width) {
  const std::size_t n = series.size();
  Matrix d(n, n, 0.0);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n * (n - (n > 0 ? 1 : 0)) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  parallel_for(pairs.size(), [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    const double v = std::sqrt(dtw_cost(series[i], series[j], band_width));
    d(i, j) = v;
    d(j, i) = v;
  });
  return d;
}

}  // namespace paincast::dtw
