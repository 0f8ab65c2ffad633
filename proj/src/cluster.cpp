#include "paincast/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "paincast/error.hpp"
#include "paincast/parallel.hpp"
#include "paincast/rng.hpp"

namespace paincast::cluster {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Sequence fill_missing(const Sequence& s) {
  Sequence out(s.length(), s.channels());
  for (std::size_t i = 0; i < s.length(); ++i) {
    for (std::size_t c = 0; c < s.channels(); ++c) out.set(i, c, s.observed(i, c) ? s.value(i, c) : 0.0);
  }
  return out;
}

struct RunResult {
  std::vector<Sequence> centroids;
  std::vector<int> labels;
  std::vector<double> trace;
  double inertia = kInf;
};

RunResult run_once(std::span<const Sequence> series, const KMeansOptions& opt, std::uint64_t seed) {
  const std::size_t n = series.size();
  const std::size_t k = opt.k;
  Rng rng(seed);

  // k-means++ seeding with squared DTW distance.
  std::vector<Sequence> centroids;
  centroids.push_back(fill_missing(series[rng.index(n)]));
  std::vector<double> nearest(n, kInf);
  while (centroids.size() < k) {
    const Sequence& last = centroids.back();
    parallel_for(n, [&](std::size_t i) { nearest[i] = std::min(nearest[i], dtw::dtw_cost(series[i], last, opt.band_width)); });
    centroids.push_back(fill_missing(series[rng.categorical(nearest)]));
  }

  RunResult run;
  std::vector<int> labels(n, -1);
  std::vector<double> own(n, 0.0);
  for (std::size_t iter = 0; iter < opt.max_iter; ++iter) {
    std::vector<int> next(n, 0);
    parallel_for(n, [&](std::size_t i) {
      double best = kInf;
      int best_j = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const double c = dtw::dtw_cost(series[i], centroids[j], opt.band_width);
        if (c < best) {
          best = c;
          best_j = static_cast<int>(j);
        }
      }
      next[i] = best_j;
      own[i] = best;
    });

    // Farthest-point repair of empty clusters.
    std::vector<std::size_t> sizes(k, 0);
    for (int l : next) ++sizes[static_cast<std::size_t>(l)];
    for (std::size_t j = 0; j < k; ++j) {
      if (sizes[j] > 0) continue;
      std::size_t far = n;
      double far_cost = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sizes[static_cast<std::size_t>(next[i])] > 1 && own[i] > far_cost) {
          far_cost = own[i];
          far = i;
        }
      }
      if (far == n) break;
      --sizes[static_cast<std::size_t>(next[far])];
      next[far] = static_cast<int>(j);
      ++sizes[j];
      centroids[j] = fill_missing(series[far]);
      own[far] = 0.0;
    }

    // DBA update per cluster, warm-started from the current centroid.
    double inertia = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<Sequence> members;
      for (std::size_t i = 0; i < n; ++i) {
        if (next[i] == static_cast<int>(j)) members.push_back(series[i]);
      }
      if (members.empty()) continue;
      dtw::DbaOptions dba;
      dba.max_iter = opt.dba_iter;
      dba.tol = opt.tol;
      dba.band_width = opt.band_width;
      auto result = dtw::dba_barycenter(members, centroids[j], dba);
      centroids[j] = std::move(result.centroid);
      inertia += result.objective.back();
    }

    const bool stable = next == labels;
    const double previous = run.trace.empty() ? kInf : run.trace.back();
    labels = std::move(next);
    run.trace.push_back(inertia);
    if (stable && previous - inertia <= opt.tol * previous) break;
  }
  run.centroids = std::move(centroids);
  run.labels = std::move(labels);
  run.inertia = run.trace.back();
  return run;
}

double entropy(const std::map<int, std::size_t>& counts, double n) {
  double h = 0.0;
  for (const auto& [label, count] : counts) {
    const double p = static_cast<double>(count) / n;
    h -= p * std::log(p);
  }
  return h;
}

void check_labelings(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LabelSetMismatch, "labelings cover different item sets");
  if (a.empty()) throw Error(ErrorCode::LabelSetMismatch, "labelings are empty");
}

}  // namespace

ClusterModel kmeans_dtw(std::span<const Sequence> series, const KMeansOptions& options) {
  if (options.k == 0) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
  if (series.empty() || options.k > series.size()) {
    throw Error(ErrorCode::TooFewSeries, "k-means needs at least k series (k=" + std::to_string(options.k) +
                                             ", n=" + std::to_string(series.size()) + ")");
  }
  ClusterModel model;
  model.seed = options.seed;
  RunResult best;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, options.n_init); ++r) {
    RunResult run = run_once(series, options, derive_seed(options.seed, {r}));
    model.restart_inertia.push_back(run.inertia);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  model.centroids = std::move(best.centroids);
  model.labels = std::move(best.labels);
  model.inertia_trace = std::move(best.trace);
  model.inertia = best.inertia;
  return model;
}

double nmi(std::span<const int> a, std::span<const int> b) {
  check_labelings(a, b);
  const double n = static_cast<double>(a.size());
  std::map<int, std::size_t> ca, cb;
  std::map<std::pair<int, int>, std::size_t> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    ++joint[{a[i], b[i]}];
  }
  const double ha = entropy(ca, n);
  const double hb = entropy(cb, n);
  if (ha + hb <= 0.0) return 1.0;
  double mi = 0.0;
  for (const auto& [key, count] : joint) {
    const double pxy = static_cast<double>(count) / n;
    const double px = static_cast<double>(ca[key.first]) / n;
    const double py = static_cast<double>(cb[key.second]) / n;
    mi += pxy * std::log(pxy / (px * py));
  }
  return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

double purity(std::span<const int> predicted, std::span<const int> reference) {
  check_labelings(predicted, reference);
  std::map<int, std::map<int, std::size_t>> overlap;
  for (std::size_t i = 0; i < predicted.size(); ++i) ++overlap[predicted[i]][reference[i]];
  std::size_t total = 0;
  for (const auto& [cluster, counts] : overlap) {
    std::size_t best = 0;
    for (const auto& [cls, count] : counts) best = std::max(best, count);
    total += best;
  }
  return static_cast<double>(total) / static_cast<double>(predicted.size());
}

double silhouette(const Matrix& d, std::span<const int> labels) {
  const std::size_t n = labels.size();
  if (d.rows != n || d.cols != n) throw Error(ErrorCode::LabelSetMismatch, "distance matrix does not match labels");
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw Error(ErrorCode::SingleCluster, "silhouette needs at least two clusters");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sizes[labels[i]] == 1) continue;
    std::map<int, double> sum;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sum[labels[j]] += d(i, j);
    }
    const double a = sum[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
    double b = kInf;
    for (const auto& [label, size] : sizes) {
      if (label != labels[i]) b = std::min(b, sum[label] / static_cast<double>(size));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

double silhouette_dtw(std::span<const Sequence> series, std::span<const int> labels,
                      std::optional<std::size_t> band_width) {
  if (series.size() != labels.size()) throw Error(ErrorCode::LabelSetMismatch, "series and labels differ in size");
  return silhouette(dtw::distance_matrix(series, band_width), labels);
}

SelectKResult select_k(std::span<const Sequence> series, std::span<const std::size_t> k_range,
                       const KMeansOptions& base, std::span<const int> reference) {
  if (k_range.empty()) throw Error(ErrorCode::InvalidConfig, "empty k range");
  for (std::size_t k : k_range) {
    if (k < 2 || k >= series.size()) {
      throw Error(ErrorCode::InvalidConfig, "k range must lie in [2, n) (got k=" + std::to_string(k) + ")");
    }
  }
  const Matrix d = dtw::distance_matrix(series, base.band_width);
  SelectKResult result;
  double best = -kInf;
  for (std::size_t k : k_range) {
    KMeansOptions opt = base;
    opt.k = k;
    const ClusterModel model = kmeans_dtw(series, opt);
    SelectKRow row;
    row.k = k;
    row.inertia = model.inertia;
    std::map<int, int> used;
    for (int l : model.labels) used[l] = 1;
    row.silhouette = used.size() >= 2 ? silhouette(d, model.labels) : 0.0;
    if (!reference.empty()) {
      row.nmi = nmi(model.labels, reference);
      row.purity = purity(model.labels, reference);
    }
    if (row.silhouette > best) {
      best = row.silhouette;
      result.best_k = k;
    }
    result.rows.push_back(row);
  }
  return result;
}

std::vector<std::size_t> hungarian(const Matrix& cost) {
  const std::size_t n = cost.rows;
  if (cost.cols != n) throw Error(ErrorCode::KMismatch, "assignment cost matrix must be square");
  // Potentials formulation, 1-based internally.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] != 0) assignment[p[j] - 1] = j - 1;
  }
  return assignment;
}

Alignment align_from_costs(const Matrix& cost) {
  const auto assignment = hungarian(cost);
  Alignment a;
  a.permutation.assign(cost.cols, 0);
  for (std::size_t prev = 0; prev < assignment.size(); ++prev) {
    a.permutation[assignment[prev]] = static_cast<int>(prev);
    a.cost += cost(prev, assignment[prev]);
  }
  return a;
}

Alignment align_labels(const ClusterModel& prev, const ClusterModel& next) {
  if (prev.k() != next.k()) throw Error(ErrorCode::KMismatch, "cannot align models with different k");
  const std::size_t k = prev.k();
  Matrix cost(k, k);
  parallel_for(k * k, [&](std::size_t idx) {
    const std::size_t i = idx / k;
    const std::size_t j = idx % k;
    cost(i, j) = dtw::dtw_distance(prev.centroids[i], next.centroids[j]).distance;
  });
  return align_from_costs(cost);
}

ClusterModel relabel(const ClusterModel& model, std::span<const int> permutation) {
  if (permutation.size() != model.k()) throw Error(ErrorCode::KMismatch, "permutation size differs from k");
  ClusterModel out = model;
  for (std::size_t j = 0; j < model.k(); ++j) {
    out.centroids[static_cast<std::size_t>(permutation[j])] = model.centroids[j];
  }
  for (auto& l : out.labels) l = permutation[static_cast<std::size_t>(l)];
  return out;
}

Sequence reduce_series(const GriddedSeries& g, const ChannelStats& stats, const ReduceOptions& options) {
  std::vector<Channel> channels;
  for (Channel c : kAllChannels) {
    if (c != Channel::Pain || options.include_pain) channels.push_back(c);
  }
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (Channel c : channels) {
      if (g.present(r, c)) {
        rows.push_back(r);
        break;
      }
    }
  }
  if (rows.empty()) throw Error(ErrorCode::EmptySequence, "patient-year " + g.patient_id + " has no present cells");
  const std::size_t count = rows.size();
  const std::size_t m = std::min(count, std::max<std::size_t>(1, options.max_len));
  Sequence out(m, channels.size());
  for (std::size_t b = 0; b < m; ++b) {
    const std::size_t lo = b * count / m;
    const std::size_t hi = (b + 1) * count / m;
    for (std::size_t ci = 0; ci < channels.size(); ++ci) {
      const Channel c = channels[ci];
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t k = lo; k < hi; ++k) {
        if (g.present(rows[k], c)) {
          sum += g.value(rows[k], c);
          ++n;
        }
      }
      if (n == 0) {
        out.clear(b, ci);
      } else {
        const std::size_t s = index_of(c);
        out.set(b, ci, (sum / static_cast<double>(n) - stats.mean[s]) / stats.sd[s]);
      }
    }
  }
  if (options.fill_gaps) {
    for (std::size_t ci = 0; ci < channels.size(); ++ci) {
      std::vector<std::size_t> seen;
      for (std::size_t b = 0; b < m; ++b) {
        if (out.observed(b, ci)) seen.push_back(b);
      }
      if (seen.empty() || seen.size() == m) continue;
      std::size_t next = 0;
      for (std::size_t b = 0; b < m; ++b) {
        while (next < seen.size() && seen[next] < b) ++next;
        if (next < seen.size() && seen[next] == b) continue;
        std::size_t src;
        if (next == 0) {
          src = seen.front();
        } else if (next == seen.size()) {
          src = seen.back();
        } else {
          src = b - seen[next - 1] <= seen[next] - b ? seen[next - 1] : seen[next];
        }
        out.set(b, ci, out.value(src, ci));
      }
    }
  }
  return out;
}

int pain_band(double mean_pain) {
  const long rounded = std::lround(mean_pain);
  if (rounded <= 0) return 0;
  if (rounded <= 3) return 1;
  if (rounded <= 7) return 2;
  return 3;
}

nlohmann::json to_json(const ClusterModel& model) {
  nlohmann::json centroids = nlohmann::json::array();
  for (const auto& c : model.centroids) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < c.length(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t ch = 0; ch < c.channels(); ++ch) {
        if (c.observed(i, ch)) {
          row.push_back(c.value(i, ch));
        } else {
          row.push_back(nullptr);
        }
      }
      rows.push_back(row);
    }
    centroids.push_back(rows);
  }
  return nlohmann::json{{"year", model.year},
                        {"k", model.k()},
                        {"centroids", centroids},
                        {"ids", model.ids},
                        {"labels", model.labels},
                        {"inertia", model.inertia},
                        {"inertia_trace", model.inertia_trace},
                        {"restart_inertia", model.restart_inertia},
                        {"seed", model.seed}};
}

ClusterModel cluster_model_from_json(const nlohmann::json& j) {
  ClusterModel model;
  j.at("year").get_to(model.year);
  j.at("ids").get_to(model.ids);
  j.at("labels").get_to(model.labels);
  j.at("inertia").get_to(model.inertia);
  if (j.contains("inertia_trace")) j.at("inertia_trace").get_to(model.inertia_trace);
  if (j.contains("restart_inertia")) j.at("restart_inertia").get_to(model.restart_inertia);
  j.at("seed").get_to(model.seed);
  for (const auto& rows : j.at("centroids")) {
    const std::size_t len = rows.size();
    const std::size_t ch = len > 0 ? rows.at(0).size() : 0;
    Sequence s(len, ch);
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t c = 0; c < ch; ++c) {
        const auto& v = rows.at(i).at(c);
        if (v.is_null()) {
          s.clear(i, c);
        } else {
          s.set(i, c, v.get<double>());
        }
      }
    }
    model.centroids.push_back(std::move(s));
  }
  return model;
}

}  // namespace paincast::cluster
