#pragma once

// Time-recursive differencing and ARMA estimation on short scalar series.
//
// Conventions used throughout:
//   * A "raw" series holds feature samples f_k, oldest first.
//   * difference(raw, d) yields the stationary series s_k = (1 - L)^d f_k.
//   * ARMA(p, q) acts on s:  s_n = sum a_i s_{n-i} + sum b_j e_{n-j} + e_n + c
//     with e ~ N(0, sigma^2). Point forecasts take e_n at its mean (zero).

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vad {
class KeyValues;
}

namespace vad::arima {

using Series = std::vector<double>;

struct Order {
  int p = 0;
  int d = 0;
  int q = 0;

  int total() const { return p + d + q; }
  friend bool operator==(const Order&, const Order&) = default;
};

struct OrderBounds {
  int p_max = 1;
  int d_max = 1;
  int q_max = 1;
};

struct Model {
  Order order;
  std::vector<double> ar;  // a_1..a_p
  std::vector<double> ma;  // b_1..b_q
  double intercept = 0.0;
  double noise_variance = 0.0;
  // Diagnostics only; never enforced during fitting.
  bool nonstationary = false;  // AR polynomial has a root on/inside the unit circle
  bool noninvertible = false;  // same for the MA polynomial

  /// Throws ErrorKind::invalid_model when coefficient counts or values are off.
  void validate() const;

  /// AIC parameter count: p + q + intercept + variance.
  int parameter_count() const { return order.p + order.q + 2; }
};

/// (1 - L)^d x. Output has x.size() - d samples.
Series difference(std::span<const double> x, int d);

/// Inverse of difference() with zero pre-sample values: returns y with
/// y.size() == w.size() and difference(y, d)[k] == w[k + d].
Series integrate(std::span<const double> w, int d);

/// One-step point forecast of the next stationary sample. The most recent
/// samples are at the back of s_hist and e_hist.
double forecast_one_step(const Model& model, std::span<const double> s_hist,
                         std::span<const double> e_hist);

/// CSS innovations over a stationary series: e_t = s_t - forecast for
/// t >= max(p, conditioning); earlier innovations are pre-sample and zero.
Series innovations(const Model& model, std::span<const double> s,
                   std::size_t conditioning = 0);

/// Gaussian conditional-sum-of-squares log-likelihood of a stationary series
/// using model.noise_variance. The first `conditioning` samples (at least p)
/// are conditioned on and excluded from the sum.
double css_log_likelihood(const Model& model, std::span<const double> s);
double css_log_likelihood(const Model& model, std::span<const double> s,
                          std::size_t conditioning);

/// Log-likelihood with sigma^2 replaced by its maximizer ssr / count.
double concentrated_log_likelihood(double ssr, std::size_t count);

double aic(double loglik, int parameter_count);

struct FitOptions {
  // Leading samples of the differenced series excluded from the objective.
  // Values below p are raised to p.
  std::size_t conditioning = 0;
  int max_iterations = 200;
  double relative_tolerance = 1e-8;
};

struct FitResult {
  Model model;
  double log_likelihood = 0.0;  // concentrated, over the conditioned steps
  std::size_t steps = 0;        // number of steps in the likelihood
};

/// Differences `raw` by order.d and fits (a, b, c) by CSS. The returned
/// model's noise variance is the mean squared residual.
FitResult fit_detailed(std::span<const double> raw, Order order,
                       const FitOptions& options = {});
Model fit(std::span<const double> raw, Order order,
          const FitOptions& options = {});

struct UnitRootTest {
  bool available = false;  // false when the series is too short
  int lags = 0;
  double statistic = 0.0;  // t-ratio of the lagged level
  double critical_5pct = 0.0;

  bool rejects_unit_root() const { return available && statistic < critical_5pct; }
};

/// Augmented Dickey-Fuller test with intercept, cube-root lag rule and
/// finite-sample 5% critical value.
UnitRootTest adf_test(std::span<const double> x);

struct SelectOptions {
  // When set and the series has at least pretest_min_samples values, d is
  // fixed to the smallest order whose differenced series rejects a unit root
  // (d_max if none does) and AIC chooses (p, q). Otherwise AIC chooses all
  // three.
  bool unit_root_pretest = true;
  std::size_t pretest_min_samples = 20;
  // Skip ARMA candidates whose AR and MA reciprocal roots lie within this
  // distance of each other (redundant parameterizations). 0 disables.
  double common_factor_tolerance = 0.2;
  // Skip candidates whose fitted MA polynomial is not invertible: their
  // innovation recursion diverges when used for forecasting.
  bool require_invertible = true;
  FitOptions fit;
};

struct Selection {
  Order order;
  Model model;
  double aic = 0.0;
  double log_likelihood = 0.0;
  std::size_t common_start = 0;  // raw samples conditioned on by every candidate
};

/// Exhaustive AIC search over 0..p_max x 0..d_max x 0..q_max. All candidates
/// are scored on the same trailing observations so their likelihoods are
/// comparable. Ties resolve to the smallest p+d+q, then d, then p.
Selection select_order(std::span<const double> raw, OrderBounds bounds,
                       const SelectOptions& options = {});

/// Search over an explicit candidate list (used for block refinement).
Selection select_order(std::span<const double> raw,
                       std::span<const Order> candidates,
                       const SelectOptions& options = {});

/// AIC of a fixed model on `raw`, scored with the same common-sample rule
/// select_order uses for the given conditioning depth.
double evaluate_aic(const Model& model, std::span<const double> raw,
                    std::size_t common_start);

/// Flat "key = value" text; doubles are written with 17 significant digits.
std::string serialize(const Model& model);
Model parse_model(std::string_view text);

/// The same record embedded in a larger file under "<prefix>key".
void store_model(KeyValues& kv, const Model& model, const std::string& prefix);
Model load_model(const KeyValues& kv, const std::string& prefix);

}  // namespace vad::arima
