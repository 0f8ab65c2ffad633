#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace paincast::stats {

struct Correlogram {
  std::vector<double> values;  // lags 0..L
  double band = 0.0;           // 1.96 / sqrt(n)
  std::size_t n = 0;

  std::size_t max_lag() const noexcept { return values.empty() ? 0 : values.size() - 1; }
  /// Fraction of lags 1..L with |value| < band.
  double fraction_within_band() const;
};

/// Sample autocorrelation. Throws InvalidConfig (bad max_lag) or ConstantSeries.
Correlogram acf(std::span<const double> y, std::size_t max_lag);

/// Partial autocorrelation via Durbin-Levinson on the sample ACF.
Correlogram pacf(std::span<const double> y, std::size_t max_lag);

/// CSV with header `lag,value,band`.
void write_correlogram_csv(std::ostream& out, const Correlogram& c);

inline constexpr double kAdfCritical1 = -3.43;
inline constexpr double kAdfCritical5 = -2.86;
inline constexpr double kAdfCritical10 = -2.57;

struct AdfResult {
  double statistic = 0.0;
  std::size_t n_lags = 0;
  std::size_t n_obs = 0;  // regression rows
  bool reject_1 = false;
  bool reject_5 = false;
  bool reject_10 = false;
};

/// floor((n-1)^(1/3))
std::size_t default_adf_lags(std::size_t n);

/// Constant-only augmented Dickey-Fuller test. Throws InvalidConfig when
/// n <= n_lags + 10 and SingularRegression when the regression is rank
/// deficient or fits exactly (a pure deterministic trend does).
AdfResult adf_test(std::span<const double> y, std::optional<std::size_t> n_lags = std::nullopt);

/// d-th order differences; length n - d.
std::vector<double> difference(std::span<const double> y, int d);

inline constexpr int kMaxArOrder = 5;
inline constexpr int kMaxMaOrder = 5;

struct ArimaOptions {
  std::size_t max_iter = 200;
  double tol = 1e-10;  // relative SSE decrease treated as converged
};

/// ARMA(p, q) on the d-times differenced series w:
///   (w_t - mu) = sum_i phi_i (w_{t-i} - mu) + e_t + sum_j theta_j e_{t-j}
/// `intercept` is the process mean mu.
struct ArimaModel {
  int p = 0;
  int d = 0;
  int q = 0;
  std::vector<double> ar;
  std::vector<double> ma;
  double intercept = 0.0;
  double sigma2 = 0.0;
  double sse = 0.0;
  double aic = 0.0;
  std::size_t n_eff = 0;
  std::vector<double> residuals;  // n_eff entries
  std::size_t iterations = 0;
  bool stationary = true;
  bool invertible = true;
};

/// Conditional sum of squares (zero initial residuals, the first p
/// differenced values are conditioned on), minimised by Levenberg-Marquardt
/// with analytic residual derivatives.
/// AIC = n_eff ln(SSE / n_eff) + 2 (p + q + 1), n_eff = n - d - p.
/// Throws InvalidConfig, DegenerateSeries or NonConvergence.
ArimaModel arima_fit(std::span<const double> y, int p, int d, int q, const ArimaOptions& options = {});

/// CSS residuals of the model's ARMA part on an already differenced series.
std::vector<double> arma_residuals(const ArimaModel& m, std::span<const double> w);

struct GridCell {
  int p = 0;
  int q = 0;
  bool ok = false;
  double aic = 0.0;
  std::string reason;
};

struct GridSearchOptions {
  std::optional<int> d;                 // chosen by ADF when unset
  std::optional<std::size_t> adf_lags;  // default_adf_lags when unset
  int max_p = kMaxArOrder;
  int max_q = kMaxMaOrder;
  std::size_t residual_lags = 20;
  ArimaOptions fit;
};

struct GridSearchResult {
  ArimaModel best;
  std::vector<GridCell> cells;
  std::vector<AdfResult> adf;  // one per differencing level tried
  std::optional<Correlogram> residual_acf;
  std::optional<Correlogram> residual_pacf;
};

/// d by repeated ADF (difference until rejection at 5%, at most 2), then
/// every (p, q) in [0, max_p] x [0, max_q]. Non-stationary or non-invertible
/// fits are excluded. Winner by (AIC, p + q, p). Throws AllFitsFailed.
GridSearchResult arima_grid_search(std::span<const double> y, const GridSearchOptions& options = {});

/// h-step recursive forecast of the original (undifferenced) series y,
/// innovations beyond the sample set to zero.
std::vector<double> arima_forecast(const ArimaModel& m, std::span<const double> y, std::size_t h);

nlohmann::json to_json(const ArimaModel& m);

}  // namespace paincast::stats
