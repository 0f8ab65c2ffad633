#include "paincast/stats.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "paincast/csv.hpp"
#include "paincast/error.hpp"
#include "paincast/parallel.hpp"

namespace paincast::stats {

namespace {

double mean_of(std::span<const double> y) {
  return std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
}

void check_lags(std::size_t n, std::size_t max_lag) {
  if (max_lag < 1 || n <= max_lag) {
    throw Error(ErrorCode::InvalidConfig, "correlogram needs n > max_lag >= 1 (n=" + std::to_string(n) +
                                              ", max_lag=" + std::to_string(max_lag) + ")");
  }
}

double spectral_radius(const std::vector<double>& coef) {
  const auto k = static_cast<Eigen::Index>(coef.size());
  if (k == 0) return 0.0;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) companion(0, i) = coef[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 1; i < k; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

// Residuals over the full differenced series (zeros before index p), with the
// Jacobian of residuals p..N-1 with respect to [phi, theta, mu] when requested.
struct CssEval {
  std::vector<double> e;
  Eigen::MatrixXd jac;
  double sse = 0.0;
};

CssEval css(std::span<const double> w, int p, int q, const Eigen::VectorXd& beta, bool with_jacobian) {
  const std::size_t n = w.size();
  const auto up = static_cast<std::size_t>(p);
  const auto uq = static_cast<std::size_t>(q);
  const std::size_t k = up + uq + 1;
  const double mu = beta(static_cast<Eigen::Index>(k - 1));
  CssEval out;
  out.e.assign(n, 0.0);
  std::vector<double> de;  // row-major n x k
  if (with_jacobian) de.assign(n * k, 0.0);
  double phi_sum = 0.0;
  for (std::size_t i = 0; i < up; ++i) phi_sum += beta(static_cast<Eigen::Index>(i));
  for (std::size_t t = up; t < n; ++t) {
    double e = w[t] - mu;
    for (std::size_t i = 1; i <= up; ++i) e -= beta(static_cast<Eigen::Index>(i - 1)) * (w[t - i] - mu);
    for (std::size_t j = 1; j <= uq && j <= t; ++j) e -= beta(static_cast<Eigen::Index>(up + j - 1)) * out.e[t - j];
    out.e[t] = e;
    out.sse += e * e;
    if (!with_jacobian) continue;
    double* row = de.data() + t * k;
    for (std::size_t i = 1; i <= up; ++i) row[i - 1] = -(w[t - i] - mu);
    for (std::size_t j = 1; j <= uq; ++j) row[up + j - 1] = t >= j ? -out.e[t - j] : 0.0;
    row[k - 1] = -1.0 + phi_sum;
    for (std::size_t l = 1; l <= uq && l <= t; ++l) {
      const double theta = beta(static_cast<Eigen::Index>(up + l - 1));
      const double* prev = de.data() + (t - l) * k;
      for (std::size_t c = 0; c < k; ++c) row[c] -= theta * prev[c];
    }
  }
  if (with_jacobian) {
    out.jac.resize(static_cast<Eigen::Index>(n - up), static_cast<Eigen::Index>(k));
    for (std::size_t t = up; t < n; ++t) {
      for (std::size_t c = 0; c < k; ++c) {
        out.jac(static_cast<Eigen::Index>(t - up), static_cast<Eigen::Index>(c)) = de[t * k + c];
      }
    }
  }
  return out;
}

bool better(const ArimaModel& a, const ArimaModel& b) {
  if (a.aic != b.aic) return a.aic < b.aic;
  if (a.p + a.q != b.p + b.q) return a.p + a.q < b.p + b.q;
  return a.p < b.p;
}

}  // namespace

double Correlogram::fraction_within_band() const {
  if (values.size() < 2) return 1.0;
  std::size_t inside = 0;
  for (std::size_t k = 1; k < values.size(); ++k) inside += std::abs(values[k]) < band ? 1 : 0;
  return static_cast<double>(inside) / static_cast<double>(values.size() - 1);
}

Correlogram acf(std::span<const double> y, std::size_t max_lag) {
  const std::size_t n = y.size();
  check_lags(n, max_lag);
  const double m = mean_of(y);
  double denom = 0.0;
  for (double v : y) denom += (v - m) * (v - m);
  if (!(denom > 0.0)) throw Error(ErrorCode::ConstantSeries, "autocorrelation of a constant series");
  Correlogram c;
  c.n = n;
  c.band = 1.96 / std::sqrt(static_cast<double>(n));
  c.values.assign(max_lag + 1, 0.0);
  c.values[0] = 1.0;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double num = 0.0;
    for (std::size_t t = 0; t + k < n; ++t) num += (y[t] - m) * (y[t + k] - m);
    c.values[k] = num / denom;
  }
  return c;
}

Correlogram pacf(std::span<const double> y, std::size_t max_lag) {
  const Correlogram r = acf(y, max_lag);
  Correlogram out = r;
  std::vector<double> phi(max_lag + 1, 0.0), prev(max_lag + 1, 0.0);
  double v = 1.0;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double num = r.values[k];
    for (std::size_t j = 1; j < k; ++j) num -= prev[j] * r.values[k - j];
    const double a = v > 0.0 ? num / v : 0.0;
    phi[k] = a;
    for (std::size_t j = 1; j < k; ++j) phi[j] = prev[j] - a * prev[k - j];
    v *= (1.0 - a * a);
    out.values[k] = a;
    prev = phi;
  }
  return out;
}

void write_correlogram_csv(std::ostream& out, const Correlogram& c) {
  out << "lag,value,band\n";
  for (std::size_t k = 0; k < c.values.size(); ++k) {
    out << k << ',' << csv::format_double(c.values[k]) << ',' << csv::format_double(c.band) << '\n';
  }
}

std::size_t default_adf_lags(std::size_t n) {
  if (n < 2) return 0;
  auto lags = static_cast<std::size_t>(std::floor(std::cbrt(static_cast<double>(n - 1))));
  // cbrt of a perfect cube can land just below the integer.
  while ((lags + 1) * (lags + 1) * (lags + 1) <= n - 1) ++lags;
  return lags;
}

AdfResult adf_test(std::span<const double> y, std::optional<std::size_t> n_lags) {
  const std::size_t n = y.size();
  const std::size_t lags = n_lags.value_or(default_adf_lags(n));
  if (n <= lags + 10) {
    throw Error(ErrorCode::InvalidConfig,
                "ADF needs n > n_lags + 10 (n=" + std::to_string(n) + ", n_lags=" + std::to_string(lags) + ")");
  }
  // Rows t = lags+1 .. n-1 of dy_t = a + b y_{t-1} + sum g_i dy_{t-i}.
  const std::size_t rows = n - lags - 1;
  const std::size_t cols = 2 + lags;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Eigen::VectorXd target(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = r + lags + 1;
    const auto ri = static_cast<Eigen::Index>(r);
    target(ri) = y[t] - y[t - 1];
    x(ri, 0) = 1.0;
    x(ri, 1) = y[t - 1];
    for (std::size_t i = 1; i <= lags; ++i) x(ri, static_cast<Eigen::Index>(1 + i)) = y[t - i] - y[t - i - 1];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < static_cast<Eigen::Index>(cols)) {
    throw Error(ErrorCode::SingularRegression, "ADF regression is rank deficient");
  }
  const Eigen::VectorXd beta = qr.solve(target);
  const Eigen::VectorXd resid = target - x * beta;
  const double dof = static_cast<double>(rows - cols);
  const double s2 = resid.squaredNorm() / dof;
  const double scale = target.squaredNorm() + 1.0;
  if (!(s2 * dof > 1e-24 * scale)) throw Error(ErrorCode::SingularRegression, "ADF regression fits exactly");
  const Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
  const double se = std::sqrt(s2 * xtx_inv(1, 1));
  AdfResult out;
  out.statistic = beta(1) / se;
  out.n_lags = lags;
  out.n_obs = rows;
  out.reject_1 = out.statistic < kAdfCritical1;
  out.reject_5 = out.statistic < kAdfCritical5;
  out.reject_10 = out.statistic < kAdfCritical10;
  return out;
}

std::vector<double> difference(std::span<const double> y, int d) {
  std::vector<double> out(y.begin(), y.end());
  for (int k = 0; k < d && !out.empty(); ++k) {
    for (std::size_t i = 0; i + 1 < out.size(); ++i) out[i] = out[i + 1] - out[i];
    out.pop_back();
  }
  return out;
}

ArimaModel arima_fit(std::span<const double> y, int p, int d, int q, const ArimaOptions& options) {
  if (p < 0 || p > kMaxArOrder || q < 0 || q > kMaxMaOrder || d < 0 || d > 2) {
    throw Error(ErrorCode::InvalidConfig, "ARIMA orders out of range (" + std::to_string(p) + "," +
                                              std::to_string(d) + "," + std::to_string(q) + ")");
  }
  const std::vector<double> w = difference(y, d);
  const std::size_t n = w.size();
  if (y.size() < static_cast<std::size_t>(d) || n <= static_cast<std::size_t>(p + q + 10)) {
    throw Error(ErrorCode::InvalidConfig, "series too short for ARIMA(" + std::to_string(p) + "," +
                                              std::to_string(d) + "," + std::to_string(q) + ")");
  }
  const double mu0 = mean_of(w);
  double var = 0.0;
  for (double v : w) var += (v - mu0) * (v - mu0);
  if (!(var > 1e-24 * (1.0 + mu0 * mu0) * static_cast<double>(n))) {
    throw Error(ErrorCode::DegenerateSeries, "differenced series is constant");
  }

  const auto k = static_cast<Eigen::Index>(p + q + 1);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  beta(k - 1) = mu0;
  CssEval cur = css(w, p, q, beta, true);
  double lambda = 1e-3;
  std::size_t iter = 0;
  bool converged = false;
  for (; iter < options.max_iter; ++iter) {
    const Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(cur.e.data() + p, static_cast<Eigen::Index>(n) - p);
    const Eigen::MatrixXd a = cur.jac.transpose() * cur.jac;
    const Eigen::VectorXd g = cur.jac.transpose() * e;
    Eigen::MatrixXd damped = a;
    for (Eigen::Index i = 0; i < k; ++i) damped(i, i) += lambda * a(i, i) + 1e-12;
    const Eigen::VectorXd delta = damped.ldlt().solve(-g);
    if (!delta.allFinite() || delta.norm() <= 1e-14 * (1.0 + beta.norm())) {
      converged = true;
      break;
    }
    const Eigen::VectorXd trial = beta + delta;
    CssEval next = css(w, p, q, trial, true);
    if (std::isfinite(next.sse) && next.sse < cur.sse) {
      const double rel = (cur.sse - next.sse) / cur.sse;
      beta = trial;
      cur = std::move(next);
      lambda = std::max(lambda / 10.0, 1e-12);
      if (rel < options.tol) {
        converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) {
        converged = true;
        break;
      }
    }
  }
  if (!converged) {
    throw Error(ErrorCode::NonConvergence, "CSS did not converge for ARIMA(" + std::to_string(p) + "," +
                                               std::to_string(d) + "," + std::to_string(q) + ")");
  }

  ArimaModel m;
  m.p = p;
  m.d = d;
  m.q = q;
  for (int i = 0; i < p; ++i) m.ar.push_back(beta(i));
  for (int j = 0; j < q; ++j) m.ma.push_back(beta(p + j));
  m.intercept = beta(k - 1);
  m.n_eff = n - static_cast<std::size_t>(p);
  m.residuals.assign(cur.e.begin() + p, cur.e.end());
  m.sse = cur.sse;
  if (!(m.sse > 0.0)) throw Error(ErrorCode::DegenerateSeries, "ARIMA fit has zero residual variance");
  const auto neff = static_cast<double>(m.n_eff);
  m.sigma2 = m.sse / neff;
  m.aic = neff * std::log(m.sse / neff) + 2.0 * static_cast<double>(p + q + 1);
  m.iterations = iter;
  m.stationary = spectral_radius(m.ar) < 1.0;
  std::vector<double> neg_ma(m.ma.size());
  std::transform(m.ma.begin(), m.ma.end(), neg_ma.begin(), [](double t) { return -t; });
  m.invertible = spectral_radius(neg_ma) < 1.0;
  return m;
}

std::vector<double> arma_residuals(const ArimaModel& m, std::span<const double> w) {
  Eigen::VectorXd beta(m.p + m.q + 1);
  for (int i = 0; i < m.p; ++i) beta(i) = m.ar[static_cast<std::size_t>(i)];
  for (int j = 0; j < m.q; ++j) beta(m.p + j) = m.ma[static_cast<std::size_t>(j)];
  beta(m.p + m.q) = m.intercept;
  if (w.size() <= static_cast<std::size_t>(m.p)) return {};
  const CssEval ev = css(w, m.p, m.q, beta, false);
  return {ev.e.begin() + m.p, ev.e.end()};
}

GridSearchResult arima_grid_search(std::span<const double> y, const GridSearchOptions& options) {
  GridSearchResult result;
  int d = 0;
  if (options.d) {
    d = *options.d;
  } else {
    while (d < 2) {
      const std::vector<double> w = difference(y, d);
      const std::size_t lags = options.adf_lags.value_or(default_adf_lags(w.size()));
      if (w.size() <= lags + 10) break;
      bool reject = false;
      try {
        const AdfResult r = adf_test(w, lags);
        result.adf.push_back(r);
        reject = r.reject_5;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingularRegression) throw;
      }
      if (reject) break;
      ++d;
    }
  }

  for (int p = 0; p <= options.max_p; ++p) {
    for (int q = 0; q <= options.max_q; ++q) result.cells.push_back({p, q, false, 0.0, {}});
  }
  std::vector<std::optional<ArimaModel>> fits(result.cells.size());
  parallel_for(result.cells.size(), [&](std::size_t i) {
    GridCell& cell = result.cells[i];
    try {
      ArimaModel m = arima_fit(y, cell.p, d, cell.q, options.fit);
      cell.aic = m.aic;
      if (!m.stationary) {
        cell.reason = "non-stationary";
      } else if (!m.invertible) {
        cell.reason = "non-invertible";
      } else {
        cell.ok = true;
        fits[i] = std::move(m);
      }
    } catch (const Error& e) {
      cell.reason = e.what();
    }
  });

  const ArimaModel* best = nullptr;
  for (const auto& f : fits) {
    if (f && (best == nullptr || better(*f, *best))) best = &*f;
  }
  if (best == nullptr) {
    std::string reason = result.cells.empty() ? "empty grid" : result.cells.front().reason;
    throw Error(ErrorCode::AllFitsFailed, "no ARIMA order could be fitted (d=" + std::to_string(d) + "): " + reason);
  }
  result.best = *best;
  const std::size_t lags = std::min(options.residual_lags, result.best.residuals.size() - 1);
  if (lags >= 1) {
    try {
      result.residual_acf = acf(result.best.residuals, lags);
      result.residual_pacf = pacf(result.best.residuals, lags);
    } catch (const Error&) {
      result.residual_acf.reset();
      result.residual_pacf.reset();
    }
  }
  return result;
}

std::vector<double> arima_forecast(const ArimaModel& m, std::span<const double> y, std::size_t h) {
  if (y.size() < static_cast<std::size_t>(m.d) + 1) {
    throw Error(ErrorCode::InvalidConfig, "forecast history shorter than d + 1");
  }
  std::vector<std::vector<double>> levels{std::vector<double>(y.begin(), y.end())};
  for (int l = 0; l < m.d; ++l) levels.push_back(difference(levels.back(), 1));
  const std::vector<double>& w = levels.back();
  const std::size_t n = w.size();

  std::vector<double> e(n, 0.0);
  const std::vector<double> resid = arma_residuals(m, w);
  std::copy(resid.begin(), resid.end(), e.begin() + static_cast<std::ptrdiff_t>(n - resid.size()));
  std::vector<double> z(n);
  for (std::size_t t = 0; t < n; ++t) z[t] = w[t] - m.intercept;

  std::vector<double> f(h);
  for (std::size_t s = 0; s < h; ++s) {
    const std::size_t t = n + s;
    double v = 0.0;
    for (std::size_t i = 1; i <= m.ar.size(); ++i) {
      if (t >= i) v += m.ar[i - 1] * z[t - i];
    }
    for (std::size_t j = 1; j <= m.ma.size(); ++j) {
      if (t >= j && t - j < n) v += m.ma[j - 1] * e[t - j];
    }
    z.push_back(v);
    f[s] = v + m.intercept;
  }
  for (int l = m.d - 1; l >= 0; --l) {
    double last = levels[static_cast<std::size_t>(l)].back();
    for (double& v : f) {
      last += v;
      v = last;
    }
  }
  return f;
}

nlohmann::json to_json(const ArimaModel& m) {
  return nlohmann::json{{"p", m.p},           {"d", m.d},
                        {"q", m.q},           {"ar", m.ar},
                        {"ma", m.ma},         {"intercept", m.intercept},
                        {"sigma2", m.sigma2}, {"aic", m.aic},
                        {"n_eff", m.n_eff},   {"stationary", m.stationary},
                        {"invertible", m.invertible}};
}

}  // namespace paincast::stats
