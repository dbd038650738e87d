#include "vad/arima.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <tuple>

#include "vad/error.hpp"
#include "vad/keyvalue.hpp"

namespace vad::arima {
namespace {

// Floor applied to sigma^2 inside likelihoods so exact fits stay finite.
constexpr double kVarianceFloor = 1e-12;

void require_finite(std::span<const double> x, const char* what) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      fail(ErrorKind::invalid_input,
           std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

void require_valid_order(const Order& order) {
  if (order.p < 0 || order.d < 0 || order.q < 0) {
    fail(ErrorKind::invalid_input, "negative ARIMA order");
  }
}

std::vector<double> binomial_weights(int d) {
  // w_j = (-1)^j C(d, j)
  std::vector<double> w(static_cast<std::size_t>(d) + 1);
  double c = 1.0;
  for (int j = 0; j <= d; ++j) {
    w[j] = (j % 2 == 0) ? c : -c;
    c = c * (d - j) / (j + 1);
  }
  return w;
}

// Reciprocal roots of 1 + sign * sum coeff_i z^i (companion eigenvalues).
// A modulus >= 1 means the root lies on or inside the unit circle.
Eigen::VectorXcd reciprocal_roots(const std::vector<double>& coeff, double sign) {
  const auto n = static_cast<Eigen::Index>(coeff.size());
  if (n == 0) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) companion(0, i) = -sign * coeff[i];
  for (Eigen::Index i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  return companion.eigenvalues();
}

// AR and MA polynomials sharing a factor: the model collapses to a lower order.
bool has_common_factor(const Model& m, double tolerance) {
  if (m.ar.empty() || m.ma.empty()) return false;
  const Eigen::VectorXcd ar = reciprocal_roots(m.ar, -1.0);
  const Eigen::VectorXcd ma = reciprocal_roots(m.ma, 1.0);
  for (Eigen::Index i = 0; i < ar.size(); ++i)
    for (Eigen::Index j = 0; j < ma.size(); ++j)
      if (std::abs(ar[i] - ma[j]) < tolerance) return true;
  return false;
}

double max_modulus(const Eigen::VectorXcd& roots) {
  return roots.size() == 0 ? 0.0 : roots.cwiseAbs().maxCoeff();
}

void set_diagnostics(Model& m) {
  m.nonstationary = max_modulus(reciprocal_roots(m.ar, -1.0)) >= 1.0;
  m.noninvertible = max_modulus(reciprocal_roots(m.ma, 1.0)) >= 1.0;
}

// Parameter vector layout: [a_1..a_p, b_1..b_q, c].
struct CssProblem {
  std::span<const double> s;
  int p;
  int q;
  std::size_t conditioning;

  std::size_t steps() const { return s.size() - conditioning; }

  // Residuals for t >= conditioning; returns the sum of squares, or +inf when
  // the recursion overflows.
  double residuals(const Eigen::VectorXd& theta, Eigen::VectorXd& out,
                   std::vector<double>& e) const {
    const std::size_t n = s.size();
    e.assign(n, 0.0);
    const double c = theta[p + q];
    double ssr = 0.0;
    for (std::size_t t = conditioning; t < n; ++t) {
      double pred = c;
      for (int i = 0; i < p; ++i) pred += theta[i] * s[t - 1 - i];
      for (int j = 0; j < q && static_cast<std::size_t>(j) < t; ++j) {
        pred += theta[p + j] * e[t - 1 - j];
      }
      e[t] = s[t] - pred;
      out[static_cast<Eigen::Index>(t - conditioning)] = e[t];
      ssr += e[t] * e[t];
    }
    return std::isfinite(ssr) ? ssr : std::numeric_limits<double>::infinity();
  }
};

// Levenberg-damped Gauss-Newton with a forward-difference Jacobian.
double minimize_ssr(const CssProblem& problem, Eigen::VectorXd& theta,
                    const FitOptions& options) {
  const auto k = theta.size();
  const auto m = static_cast<Eigen::Index>(problem.steps());
  Eigen::VectorXd r(m), r_step(m), trial(k);
  Eigen::MatrixXd jac(m, k);
  std::vector<double> scratch;

  double f = problem.residuals(theta, r, scratch);
  if (!std::isfinite(f)) return f;
  double mu = 1e-3;

  for (int iter = 0; iter < options.max_iterations && f > 0.0; ++iter) {
    for (Eigen::Index i = 0; i < k; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta[i]));
      trial = theta;
      trial[i] += h;
      problem.residuals(trial, r_step, scratch);
      jac.col(i) = (r_step - r) / h;
    }
    if (!jac.allFinite()) break;
    const Eigen::MatrixXd a = jac.transpose() * jac;
    const Eigen::VectorXd g = jac.transpose() * r;

    bool accepted = false;
    double f_new = f;
    while (mu < 1e12) {
      Eigen::MatrixXd damped = a;
      for (Eigen::Index i = 0; i < k; ++i) damped(i, i) += mu * a(i, i) + 1e-12;
      const Eigen::VectorXd step = damped.ldlt().solve(-g);
      trial = theta + step;
      f_new = problem.residuals(trial, r_step, scratch);
      if (std::isfinite(f_new) && f_new <= f) {
        accepted = true;
        mu = std::max(mu / 3.0, 1e-12);
        break;
      }
      mu *= 4.0;
    }
    if (!accepted) break;
    const double rel = (f - f_new) / std::max(f, std::numeric_limits<double>::min());
    theta = trial;
    r = r_step;
    f = f_new;
    if (rel < options.relative_tolerance) break;
  }
  return f;
}

std::vector<Eigen::VectorXd> start_points(int p, int q, double level) {
  const int n_coef = p + q;
  const double values[3] = {0.0, 0.3, -0.3};
  std::vector<std::vector<double>> coefs;
  if (q == 0) {
    // Pure AR: the CSS objective is quadratic, every start reaches the same minimum.
    coefs.emplace_back(static_cast<std::size_t>(n_coef), 0.0);
  } else if (n_coef <= 3) {
    int total = 1;
    for (int i = 0; i < n_coef; ++i) total *= 3;
    for (int idx = 0; idx < total; ++idx) {
      std::vector<double> c(static_cast<std::size_t>(n_coef));
      int rem = idx;
      for (int i = 0; i < n_coef; ++i) {
        c[i] = values[rem % 3];
        rem /= 3;
      }
      coefs.push_back(std::move(c));
    }
  } else {
    for (double v : values) coefs.emplace_back(static_cast<std::size_t>(n_coef), v);
  }

  std::vector<Eigen::VectorXd> out;
  out.reserve(coefs.size());
  for (const auto& c : coefs) {
    Eigen::VectorXd theta(n_coef + 1);
    double ar_sum = 0.0;
    for (int i = 0; i < n_coef; ++i) theta[i] = c[i];
    for (int i = 0; i < p; ++i) ar_sum += c[i];
    theta[n_coef] = level * (1.0 - ar_sum);
    out.push_back(std::move(theta));
  }
  return out;
}

std::vector<Order> grid(const OrderBounds& b) {
  std::vector<Order> out;
  for (int d = 0; d <= b.d_max; ++d)
    for (int p = 0; p <= b.p_max; ++p)
      for (int q = 0; q <= b.q_max; ++q) out.push_back({p, d, q});
  return out;
}

// Candidates need at least two residual degrees of freedom on the common sample.
bool fits_common_sample(const Order& o, std::size_t n, std::size_t common_start) {
  if (n < static_cast<std::size_t>(o.total() + 2)) return false;
  if (common_start < static_cast<std::size_t>(o.p + o.d)) return false;
  return n >= common_start + static_cast<std::size_t>(o.p + o.q + 3);
}

}  // namespace

void Model::validate() const {
  if (order.p < 0 || order.d < 0 || order.q < 0) {
    fail(ErrorKind::invalid_model, "negative order");
  }
  if (ar.size() != static_cast<std::size_t>(order.p) ||
      ma.size() != static_cast<std::size_t>(order.q)) {
    fail(ErrorKind::invalid_model, "coefficient count does not match order");
  }
  const auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(ar.begin(), ar.end(), finite) ||
      !std::all_of(ma.begin(), ma.end(), finite) || !std::isfinite(intercept)) {
    fail(ErrorKind::invalid_model, "non-finite coefficient");
  }
  if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance)) {
    fail(ErrorKind::invalid_model, "noise variance must be finite and >= 0");
  }
}

Series difference(std::span<const double> x, int d) {
  if (d < 0) fail(ErrorKind::invalid_input, "differencing order must be >= 0");
  if (x.size() <= static_cast<std::size_t>(d)) {
    fail(ErrorKind::insufficient_history,
         "difference: need more than " + std::to_string(d) + " samples, got " +
             std::to_string(x.size()));
  }
  const auto w = binomial_weights(d);
  Series out(x.size() - static_cast<std::size_t>(d));
  for (std::size_t k = 0; k < out.size(); ++k) {
    double acc = 0.0;
    for (int j = 0; j <= d; ++j) acc += w[j] * x[k + d - j];
    out[k] = acc;
  }
  return out;
}

Series integrate(std::span<const double> w, int d) {
  if (d < 0) fail(ErrorKind::invalid_input, "integration order must be >= 0");
  const auto weights = binomial_weights(d);
  Series y(w.size(), 0.0);
  for (std::size_t k = 0; k < w.size(); ++k) {
    double acc = w[k];
    for (int j = 1; j <= d && static_cast<std::size_t>(j) <= k; ++j) {
      acc -= weights[j] * y[k - j];
    }
    y[k] = acc;
  }
  return y;
}

double forecast_one_step(const Model& model, std::span<const double> s_hist,
                         std::span<const double> e_hist) {
  const auto p = static_cast<std::size_t>(model.order.p);
  const auto q = static_cast<std::size_t>(model.order.q);
  if (s_hist.size() < p || e_hist.size() < q) {
    fail(ErrorKind::insufficient_history, "forecast needs p samples and q innovations");
  }
  double pred = model.intercept;
  for (std::size_t i = 0; i < p; ++i) pred += model.ar[i] * s_hist[s_hist.size() - 1 - i];
  for (std::size_t j = 0; j < q; ++j) pred += model.ma[j] * e_hist[e_hist.size() - 1 - j];
  return pred;
}

Series innovations(const Model& model, std::span<const double> s,
                   std::size_t conditioning) {
  const auto p = static_cast<std::size_t>(model.order.p);
  const auto q = static_cast<std::size_t>(model.order.q);
  Series e(s.size(), 0.0);
  for (std::size_t t = std::max(p, conditioning); t < s.size(); ++t) {
    double pred = model.intercept;
    for (std::size_t i = 0; i < p; ++i) pred += model.ar[i] * s[t - 1 - i];
    for (std::size_t j = 0; j < q && j < t; ++j) pred += model.ma[j] * e[t - 1 - j];
    e[t] = s[t] - pred;
  }
  return e;
}

double css_log_likelihood(const Model& model, std::span<const double> s) {
  return css_log_likelihood(model, s, 0);
}

double css_log_likelihood(const Model& model, std::span<const double> s,
                          std::size_t conditioning) {
  model.validate();
  if (model.noise_variance <= 0.0) {
    fail(ErrorKind::invalid_model, "likelihood needs a positive noise variance");
  }
  conditioning = std::max(conditioning, static_cast<std::size_t>(model.order.p));
  if (s.size() <= conditioning) {
    fail(ErrorKind::insufficient_history, "likelihood needs more samples than conditioning");
  }
  const Series e = innovations(model, s, conditioning);
  double ssr = 0.0;
  for (std::size_t t = conditioning; t < s.size(); ++t) ssr += e[t] * e[t];
  const auto steps = static_cast<double>(s.size() - conditioning);
  const double var = model.noise_variance;
  return -0.5 * steps * std::log(2.0 * std::numbers::pi * var) - ssr / (2.0 * var);
}

double concentrated_log_likelihood(double ssr, std::size_t count) {
  const auto n = static_cast<double>(count);
  const double var = std::max(ssr / n, kVarianceFloor);
  return -0.5 * n * std::log(2.0 * std::numbers::pi * var) - ssr / (2.0 * var);
}

double aic(double loglik, int parameter_count) {
  return 2.0 * parameter_count - 2.0 * loglik;
}

FitResult fit_detailed(std::span<const double> raw, Order order,
                       const FitOptions& options) {
  require_valid_order(order);
  require_finite(raw, "fit");
  if (raw.size() < static_cast<std::size_t>(order.total() + 2)) {
    fail(ErrorKind::insufficient_history,
         "fit: order (" + std::to_string(order.p) + "," + std::to_string(order.d) + "," +
             std::to_string(order.q) + ") needs " + std::to_string(order.total() + 2) +
             " samples, got " + std::to_string(raw.size()));
  }
  const Series s = difference(raw, order.d);
  const std::size_t conditioning =
      std::max(options.conditioning, static_cast<std::size_t>(order.p));
  if (s.size() <= conditioning) {
    fail(ErrorKind::insufficient_history, "fit: conditioning leaves no samples");
  }

  const CssProblem problem{s, order.p, order.q, conditioning};
  const double level =
      std::accumulate(s.begin() + static_cast<std::ptrdiff_t>(conditioning), s.end(), 0.0) /
      static_cast<double>(problem.steps());

  Eigen::VectorXd best;
  double best_ssr = std::numeric_limits<double>::infinity();
  for (auto theta : start_points(order.p, order.q, level)) {
    const double ssr = minimize_ssr(problem, theta, options);
    if (ssr < best_ssr) {
      best_ssr = ssr;
      best = theta;
    }
  }
  if (!std::isfinite(best_ssr)) {
    fail(ErrorKind::invalid_input, "fit: objective diverged from every start");
  }

  FitResult result;
  Model& m = result.model;
  m.order = order;
  m.ar.assign(best.data(), best.data() + order.p);
  m.ma.assign(best.data() + order.p, best.data() + order.p + order.q);
  m.intercept = best[order.p + order.q];
  m.noise_variance = best_ssr / static_cast<double>(problem.steps());
  set_diagnostics(m);
  result.steps = problem.steps();
  result.log_likelihood = concentrated_log_likelihood(best_ssr, result.steps);
  return result;
}

Model fit(std::span<const double> raw, Order order, const FitOptions& options) {
  return fit_detailed(raw, order, options).model;
}

UnitRootTest adf_test(std::span<const double> x) {
  UnitRootTest out;
  const std::size_t n = x.size();
  if (n < 6) return out;

  // Lag count: cube-root rule, shrunk until the regression keeps 3 spare dof.
  int lags = static_cast<int>(std::cbrt(static_cast<double>(n - 1)));
  auto rows = [&](int k) { return static_cast<long>(n) - 1 - k; };
  while (lags > 0 && rows(lags) < lags + 2 + 3) --lags;
  if (rows(lags) < lags + 2 + 3) return out;

  // dy_t = alpha + gamma * y_{t-1} + sum_i delta_i * dy_{t-i}
  const auto m = static_cast<Eigen::Index>(rows(lags));
  const Eigen::Index k = lags + 2;
  Eigen::MatrixXd design(m, k);
  Eigen::VectorXd target(m);
  double dy_ss = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    const std::size_t t = static_cast<std::size_t>(r + lags + 1);
    target[r] = x[t] - x[t - 1];
    design(r, 0) = 1.0;
    design(r, 1) = x[t - 1];
    for (int i = 1; i <= lags; ++i) design(r, 1 + i) = x[t - i] - x[t - i - 1];
    dy_ss += target[r] * target[r];
  }
  out.available = true;
  out.lags = lags;
  out.critical_5pct = -2.8621 - 2.738 / static_cast<double>(m) -
                      8.36 / (static_cast<double>(m) * static_cast<double>(m));

  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double x_ss = 0.0;
  for (double v : x) x_ss += (v - mean) * (v - mean);
  if (x_ss <= 1e-24 * (1.0 + mean * mean)) {
    out.statistic = -std::numeric_limits<double>::infinity();  // constant: stationary
    return out;
  }

  const Eigen::VectorXd beta = design.colPivHouseholderQr().solve(target);
  const double ssr = (target - design * beta).squaredNorm();
  const double gamma = beta[1];
  if (ssr <= 1e-20 * (dy_ss + 1e-300)) {
    // Noise-free series: a unit root iff the level term carries no weight.
    out.statistic = gamma < -1e-8 ? -std::numeric_limits<double>::infinity() : 0.0;
    return out;
  }
  const double var = ssr / static_cast<double>(m - k);
  const Eigen::MatrixXd xtx = design.transpose() * design;
  const Eigen::MatrixXd inv = xtx.completeOrthogonalDecomposition().pseudoInverse();
  const double se = std::sqrt(var * inv(1, 1));
  out.statistic = se > 0.0 ? gamma / se : 0.0;
  return out;
}

Selection select_order(std::span<const double> raw, OrderBounds bounds,
                       const SelectOptions& options) {
  if (bounds.p_max < 0 || bounds.d_max < 0 || bounds.q_max < 0) {
    fail(ErrorKind::invalid_input, "negative order bound");
  }
  const auto candidates = grid(bounds);
  return select_order(raw, std::span<const Order>(candidates), options);
}

Selection select_order(std::span<const double> raw, std::span<const Order> candidates,
                       const SelectOptions& options) {
  require_finite(raw, "select_order");
  const std::size_t n = raw.size();

  // Common sample start: deepest p + d among candidates that can still fit.
  std::size_t common_start = 0;
  for (const auto& o : candidates) {
    require_valid_order(o);
    const auto depth = static_cast<std::size_t>(o.p + o.d);
    if (fits_common_sample(o, n, depth)) common_start = std::max(common_start, depth);
  }

  int d_max = 0;
  for (const auto& o : candidates) d_max = std::max(d_max, o.d);
  // Smallest d whose differenced series rejects a unit root; every d when the
  // series is too short for the pretest.
  std::optional<int> chosen_d;
  if (options.unit_root_pretest && n >= options.pretest_min_samples) {
    for (int d = 0; d <= d_max && !chosen_d; ++d) {
      if (n <= static_cast<std::size_t>(d) + 6) break;
      const UnitRootTest t = adf_test(difference(raw, d));
      if (t.available && t.rejects_unit_root()) chosen_d = d;
    }
    if (!chosen_d) chosen_d = d_max;
  }

  std::optional<Selection> best;
  auto better = [](const Selection& a, const Selection& b) {
    const double tol = 1e-9 * std::max(1.0, std::abs(b.aic));
    if (a.aic < b.aic - tol) return true;
    if (a.aic > b.aic + tol) return false;
    return std::make_tuple(a.order.total(), a.order.d, a.order.p) <
           std::make_tuple(b.order.total(), b.order.d, b.order.p);
  };

  for (const auto& o : candidates) {
    if (chosen_d && o.d != *chosen_d) continue;
    if (!fits_common_sample(o, n, common_start)) continue;
    FitOptions fo = options.fit;
    fo.conditioning = common_start - static_cast<std::size_t>(o.d);
    FitResult r;
    try {
      r = fit_detailed(raw, o, fo);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::invalid_input) continue;  // diverged
      throw;
    }
    if (options.common_factor_tolerance > 0.0 &&
        has_common_factor(r.model, options.common_factor_tolerance)) {
      continue;
    }
    if (options.require_invertible && r.model.noninvertible) continue;
    Selection cand{o, std::move(r.model), aic(r.log_likelihood, o.p + o.q + 2),
                   r.log_likelihood, common_start};
    if (!best || better(cand, *best)) best = std::move(cand);
  }
  if (!best) {
    fail(ErrorKind::insufficient_history,
         "select_order: no candidate order can be fitted to " + std::to_string(n) +
             " samples");
  }
  return *best;
}

double evaluate_aic(const Model& model, std::span<const double> raw,
                    std::size_t common_start) {
  model.validate();
  const Series s = difference(raw, model.order.d);
  const std::size_t conditioning =
      std::max(common_start - std::min<std::size_t>(common_start, model.order.d),
               static_cast<std::size_t>(model.order.p));
  if (s.size() <= conditioning) {
    fail(ErrorKind::insufficient_history, "evaluate_aic: no samples after conditioning");
  }
  const Series e = innovations(model, s, conditioning);
  double ssr = 0.0;
  for (std::size_t t = conditioning; t < s.size(); ++t) ssr += e[t] * e[t];
  if (!std::isfinite(ssr)) return std::numeric_limits<double>::infinity();
  return aic(concentrated_log_likelihood(ssr, s.size() - conditioning),
             model.parameter_count());
}

void store_model(KeyValues& kv, const Model& m, const std::string& prefix) {
  kv.set(prefix + "p", std::to_string(m.order.p));
  kv.set(prefix + "d", std::to_string(m.order.d));
  kv.set(prefix + "q", std::to_string(m.order.q));
  kv.set(prefix + "ar", format_doubles(m.ar));
  kv.set(prefix + "ma", format_doubles(m.ma));
  kv.set(prefix + "intercept", format_double(m.intercept));
  kv.set(prefix + "noise_variance", format_double(m.noise_variance));
}

Model load_model(const KeyValues& kv, const std::string& prefix) {
  Model m;
  m.order.p = static_cast<int>(kv.get_int(prefix + "p"));
  m.order.d = static_cast<int>(kv.get_int(prefix + "d"));
  m.order.q = static_cast<int>(kv.get_int(prefix + "q"));
  m.ar = kv.get_doubles(prefix + "ar");
  m.ma = kv.get_doubles(prefix + "ma");
  m.intercept = kv.get_double(prefix + "intercept");
  m.noise_variance = kv.get_double(prefix + "noise_variance");
  try {
    m.validate();
  } catch (const Error& e) {
    fail(ErrorKind::format, std::string("model record: ") + e.what());
  }
  set_diagnostics(m);
  return m;
}

std::string serialize(const Model& model) {
  KeyValues kv;
  store_model(kv, model, "");
  return kv.to_string();
}

Model parse_model(std::string_view text) {
  return load_model(KeyValues::parse(text), "");
}

}  // namespace vad::arima
