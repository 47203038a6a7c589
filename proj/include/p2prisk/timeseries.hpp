#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "p2prisk/csv.hpp"
#include "p2prisk/errors.hpp"
#include "p2prisk/numerics.hpp"

namespace p2prisk {

/// d-fold first differences; output is d elements shorter.
inline Vector difference(const Vector& series, std::size_t d) {
  if (series.size() <= d) throw std::invalid_argument("difference: series shorter than d+1");
  Vector out = series;
  for (std::size_t round = 0; round < d; ++round) {
    for (std::size_t i = 0; i + 1 < out.size(); ++i) out[i] = out[i + 1] - out[i];
    out.pop_back();
  }
  return out;
}

/// First elements of each differencing level, the anchors reintegration needs.
inline Vector difference_anchors(const Vector& series, std::size_t d) {
  if (series.size() <= d) throw std::invalid_argument("difference_anchors: series shorter than d+1");
  Vector anchors;
  Vector level = series;
  for (std::size_t round = 0; round < d; ++round) {
    anchors.push_back(level.front());
    for (std::size_t i = 0; i + 1 < level.size(); ++i) level[i] = level[i + 1] - level[i];
    level.pop_back();
  }
  return anchors;
}

/// Cumulative reintegration: exact inverse of difference given the d anchors.
inline Vector inverse_difference(const Vector& diffs, const Vector& anchors, std::size_t d) {
  if (anchors.size() != d) {
    throw std::invalid_argument("inverse_difference: need exactly d anchor values");
  }
  Vector level = diffs;
  for (std::size_t round = d; round-- > 0;) {
    Vector next(level.size() + 1);
    next[0] = anchors[round];
    for (std::size_t i = 0; i < level.size(); ++i) next[i + 1] = next[i] + level[i];
    level = std::move(next);
  }
  return level;
}

/// Sample (partial) autocorrelations by lag, plus the white-noise band.
struct CorrelogramReport {
  std::size_t max_lag = 0;
  std::size_t n_obs = 0;
  Vector acf;   // length max_lag+1, acf[0] = 1
  Vector pacf;  // length max_lag+1 when computed, pacf[0] = 1 by convention
  double confidence_band = 0.0;  // +-1.96/sqrt(n)
};

/// Biased (divide-by-n) autocovariances normalized by lag 0.
inline CorrelogramReport acf(const Vector& series, std::size_t max_lag) {
  const std::size_t n = series.size();
  if (n <= max_lag) throw std::invalid_argument("acf: need more observations than max_lag");
  if (n < 2) throw std::invalid_argument("acf: need at least two observations");

  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(n);

  Vector autocov(max_lag + 1, 0.0);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) acc += (series[t] - mean) * (series[t + lag] - mean);
    autocov[lag] = acc / static_cast<double>(n);
  }
  if (autocov[0] <= 0.0) throw numeric_error("acf: series has zero variance");

  CorrelogramReport report;
  report.max_lag = max_lag;
  report.n_obs = n;
  report.confidence_band = 1.96 / std::sqrt(static_cast<double>(n));
  report.acf.resize(max_lag + 1);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) report.acf[lag] = autocov[lag] / autocov[0];
  return report;
}

/// Durbin-Levinson recursion on the sample acf; pacf(1) = acf(1).
inline CorrelogramReport pacf(const Vector& series, std::size_t max_lag) {
  CorrelogramReport report = acf(series, max_lag);
  report.pacf.assign(max_lag + 1, 0.0);
  report.pacf[0] = 1.0;
  if (max_lag == 0) return report;

  const Vector& r = report.acf;
  Vector phi_prev(max_lag + 1, 0.0);
  Vector phi(max_lag + 1, 0.0);
  phi[1] = r[1];
  report.pacf[1] = r[1];
  for (std::size_t k = 2; k <= max_lag; ++k) {
    phi_prev = phi;
    double num = r[k];
    double den = 1.0;
    for (std::size_t j = 1; j < k; ++j) {
      num -= phi_prev[j] * r[k - j];
      den -= phi_prev[j] * r[j];
    }
    if (std::abs(den) < 1e-14) throw numeric_error("pacf: Durbin-Levinson recursion degenerated");
    phi[k] = num / den;
    for (std::size_t j = 1; j < k; ++j) phi[j] = phi_prev[j] - phi[k] * phi_prev[k - j];
    report.pacf[k] = phi[k];
  }
  return report;
}

inline CorrelogramReport correlogram(const Vector& series, std::size_t max_lag) {
  return pacf(series, max_lag);
}

namespace detail {

/// min ||A x - y|| by Householder QR; throws on rank deficiency.
inline Vector solve_least_squares(Matrix a, Vector y) {
  const std::size_t n = a.rows();
  const std::size_t k = a.cols();
  if (y.size() != n) throw std::invalid_argument("solve_least_squares: row count mismatch");
  if (n < k) throw std::invalid_argument("solve_least_squares: fewer rows than columns");

  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  const double tol = 1e-12 * std::max(scale, 1.0);

  for (std::size_t j = 0; j < k; ++j) {
    double norm = 0.0;
    for (std::size_t i = j; i < n; ++i) norm += a(i, j) * a(i, j);
    norm = std::sqrt(norm);
    if (norm <= tol) throw numeric_error("least squares: singular design matrix");

    const double alpha = a(j, j) > 0.0 ? -norm : norm;
    Vector v(n - j, 0.0);
    v[0] = a(j, j) - alpha;
    for (std::size_t i = j + 1; i < n; ++i) v[i - j] = a(i, j);
    double vtv = 0.0;
    for (double value : v) vtv += value * value;
    if (vtv <= 0.0) throw numeric_error("least squares: singular design matrix");

    a(j, j) = alpha;
    for (std::size_t i = j + 1; i < n; ++i) a(i, j) = 0.0;
    for (std::size_t col = j + 1; col < k; ++col) {
      double dot = 0.0;
      for (std::size_t i = j; i < n; ++i) dot += v[i - j] * a(i, col);
      const double factor = 2.0 * dot / vtv;
      for (std::size_t i = j; i < n; ++i) a(i, col) -= factor * v[i - j];
    }
    double dot = 0.0;
    for (std::size_t i = j; i < n; ++i) dot += v[i - j] * y[i];
    const double factor = 2.0 * dot / vtv;
    for (std::size_t i = j; i < n; ++i) y[i] -= factor * v[i - j];
  }

  Vector x(k, 0.0);
  for (std::size_t j = k; j-- > 0;) {
    double acc = y[j];
    for (std::size_t col = j + 1; col < k; ++col) acc -= a(j, col) * x[col];
    if (std::abs(a(j, j)) <= tol) throw numeric_error("least squares: singular design matrix");
    x[j] = acc / a(j, j);
  }
  return x;
}

/// Determinant by LU with partial pivoting.
inline double determinant(Matrix m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("determinant: matrix must be square");
  const std::size_t n = m.rows();
  double det = 1.0;
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t pivot = j;
    for (std::size_t i = j + 1; i < n; ++i) {
      if (std::abs(m(i, j)) > std::abs(m(pivot, j))) pivot = i;
    }
    if (m(pivot, j) == 0.0) return 0.0;
    if (pivot != j) {
      for (std::size_t col = 0; col < n; ++col) std::swap(m(pivot, col), m(j, col));
      det = -det;
    }
    det *= m(j, j);
    for (std::size_t i = j + 1; i < n; ++i) {
      const double factor = m(i, j) / m(j, j);
      for (std::size_t col = j; col < n; ++col) m(i, col) -= factor * m(j, col);
    }
  }
  return det;
}

}  // namespace detail

/// Gaussian-likelihood BIC; a perfect fit (rss = 0) maps to -infinity.
inline double bic(double rss, std::size_t n, std::size_t k) {
  if (n == 0) throw std::invalid_argument("bic: n must be positive");
  if (rss < 0.0) throw std::invalid_argument("bic: rss must be nonnegative");
  const double nn = static_cast<double>(n);
  if (rss == 0.0) return -std::numeric_limits<double>::infinity();
  return nn * std::log(rss / nn) + static_cast<double>(k) * std::log(nn);
}

struct ArModel {
  std::size_t order = 0;         // p
  double intercept = 0.0;
  Vector coefficients;           // phi_1..phi_p
  double residual_variance = 0.0;
  std::size_t n_obs = 0;         // effective observations (n - p)
  double bic = 0.0;
  std::size_t differencing = 0;  // d applied to the series before fitting
};

/// Conditional least squares: x_t regressed on 1 and its p lags.
inline ArModel fit_ar(const Vector& series, std::size_t p) {
  const std::size_t n = series.size();
  if (n <= p + 2) throw std::invalid_argument("fit_ar: series too short for order " + std::to_string(p));

  const std::size_t n_eff = n - p;
  Matrix design(n_eff, p + 1);
  Vector response(n_eff);
  for (std::size_t row = 0; row < n_eff; ++row) {
    const std::size_t t = p + row;
    design(row, 0) = 1.0;
    for (std::size_t j = 1; j <= p; ++j) design(row, j) = series[t - j];
    response[row] = series[t];
  }
  const Vector coef = detail::solve_least_squares(design, response);

  double rss = 0.0;
  for (std::size_t row = 0; row < n_eff; ++row) {
    double fitted = coef[0];
    for (std::size_t j = 1; j <= p; ++j) fitted += coef[j] * design(row, j);
    const double resid = response[row] - fitted;
    rss += resid * resid;
  }

  ArModel model;
  model.order = p;
  model.intercept = coef[0];
  model.coefficients.assign(coef.begin() + 1, coef.end());
  model.n_obs = n_eff;
  model.residual_variance = rss / static_cast<double>(n_eff);
  model.bic = bic(rss, n_eff, p + 1);
  return model;
}

/// Fits every candidate order and keeps the lowest BIC; ties go to smaller p.
inline ArModel select_ar_order(const Vector& series, std::vector<std::size_t> p_candidates) {
  if (p_candidates.empty()) throw std::invalid_argument("select_ar_order: no candidate orders");
  std::sort(p_candidates.begin(), p_candidates.end());
  p_candidates.erase(std::unique(p_candidates.begin(), p_candidates.end()), p_candidates.end());

  std::optional<ArModel> best;
  for (std::size_t p : p_candidates) {
    ArModel model = fit_ar(series, p);
    if (!best || model.bic < best->bic) best = std::move(model);
  }
  return *best;
}

struct VarModel {
  std::size_t dimension = 0;     // k
  std::size_t order = 0;         // p
  Vector intercept;              // length k
  std::vector<Matrix> lag_coefficients;  // A_1..A_p, each k x k
  Matrix residual_covariance;    // k x k
  std::size_t n_obs = 0;
  double bic = 0.0;
  std::size_t differencing = 0;
};

/// Per-equation least squares on stacked lags; columns of the input matrix
/// are the series components.
inline VarModel fit_var(const Matrix& series, std::size_t p) {
  const std::size_t n = series.rows();
  const std::size_t k = series.cols();
  if (k == 0) throw std::invalid_argument("fit_var: empty series");
  if (p == 0) throw std::invalid_argument("fit_var: order must be positive");
  if (n <= k * p + 2) throw std::invalid_argument("fit_var: series too short for order " + std::to_string(p));

  const std::size_t n_eff = n - p;
  const std::size_t n_regressors = k * p + 1;
  Matrix design(n_eff, n_regressors);
  for (std::size_t row = 0; row < n_eff; ++row) {
    const std::size_t t = p + row;
    design(row, 0) = 1.0;
    std::size_t at = 1;
    for (std::size_t lag = 1; lag <= p; ++lag) {
      for (std::size_t j = 0; j < k; ++j) design(row, at++) = series(t - lag, j);
    }
  }

  VarModel model;
  model.dimension = k;
  model.order = p;
  model.intercept.assign(k, 0.0);
  model.lag_coefficients.assign(p, Matrix(k, k));
  model.n_obs = n_eff;

  Matrix residuals(n_eff, k);
  for (std::size_t eq = 0; eq < k; ++eq) {
    Vector response(n_eff);
    for (std::size_t row = 0; row < n_eff; ++row) response[row] = series(p + row, eq);
    const Vector coef = detail::solve_least_squares(design, response);
    model.intercept[eq] = coef[0];
    std::size_t at = 1;
    for (std::size_t lag = 0; lag < p; ++lag) {
      for (std::size_t j = 0; j < k; ++j) model.lag_coefficients[lag](eq, j) = coef[at++];
    }
    for (std::size_t row = 0; row < n_eff; ++row) {
      double fitted = coef[0];
      for (std::size_t c = 1; c < n_regressors; ++c) fitted += coef[c] * design(row, c);
      residuals(row, eq) = response[row] - fitted;
    }
  }

  model.residual_covariance = Matrix(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t row = 0; row < n_eff; ++row) acc += residuals(row, i) * residuals(row, j);
      model.residual_covariance(i, j) = acc / static_cast<double>(n_eff);
    }
  }

  const double det = detail::determinant(model.residual_covariance);
  const double nn = static_cast<double>(n_eff);
  const std::size_t k_total = k * n_regressors;
  if (det <= 0.0) {
    model.bic = -std::numeric_limits<double>::infinity();
  } else {
    model.bic = nn * std::log(det) + static_cast<double>(k_total) * std::log(nn);
  }
  return model;
}

/// One-step-ahead predictions for level-unit months [test_begin, test_end),
/// feeding true past values as regressors. The model was fitted on the
/// d-differenced training series; predictions are reintegrated to levels.
inline Vector forecast_one_step_rolling(const ArModel& model, const Vector& levels,
                                        std::size_t test_begin, std::size_t test_end) {
  if (test_begin >= test_end || test_end > levels.size()) {
    throw std::invalid_argument("forecast_one_step_rolling: empty or out-of-range test range");
  }
  const std::size_t d = model.differencing;
  if (d > 1) throw std::invalid_argument("forecast_one_step_rolling: only d <= 1 supported");
  const std::size_t need = model.order + d;
  if (test_begin < need) {
    throw data_error("forecast_one_step_rolling: month index " + std::to_string(test_begin) +
                     " lacks the " + std::to_string(need) + " required lags");
  }
  Vector predictions;
  predictions.reserve(test_end - test_begin);
  for (std::size_t t = test_begin; t < test_end; ++t) {
    double value = model.intercept;
    for (std::size_t j = 1; j <= model.order; ++j) {
      const double lag = d == 0 ? levels[t - j] : levels[t - j] - levels[t - j - 1];
      value += model.coefficients[j - 1] * lag;
    }
    if (d == 1) value += levels[t - 1];
    predictions.push_back(value);
  }
  return predictions;
}

/// VAR counterpart; returns the chosen component (default_rate first).
inline Vector forecast_one_step_rolling(const VarModel& model, const Matrix& levels,
                                        std::size_t test_begin, std::size_t test_end,
                                        std::size_t component = 0) {
  if (levels.cols() != model.dimension) {
    throw std::invalid_argument("forecast_one_step_rolling: series dimension mismatch");
  }
  if (component >= model.dimension) {
    throw std::invalid_argument("forecast_one_step_rolling: component out of range");
  }
  if (test_begin >= test_end || test_end > levels.rows()) {
    throw std::invalid_argument("forecast_one_step_rolling: empty or out-of-range test range");
  }
  const std::size_t d = model.differencing;
  if (d > 1) throw std::invalid_argument("forecast_one_step_rolling: only d <= 1 supported");
  const std::size_t need = model.order + d;
  if (test_begin < need) {
    throw data_error("forecast_one_step_rolling: month index " + std::to_string(test_begin) +
                     " lacks the " + std::to_string(need) + " required lags");
  }
  const std::size_t k = model.dimension;
  Vector predictions;
  predictions.reserve(test_end - test_begin);
  Vector lag(k);
  for (std::size_t t = test_begin; t < test_end; ++t) {
    Vector value = model.intercept;
    for (std::size_t m = 1; m <= model.order; ++m) {
      for (std::size_t j = 0; j < k; ++j) {
        lag[j] = d == 0 ? levels(t - m, j) : levels(t - m, j) - levels(t - m - 1, j);
      }
      add_in_place(value, matvec(model.lag_coefficients[m - 1], lag));
    }
    predictions.push_back(d == 0 ? value[component] : levels(t - 1, component) + value[component]);
  }
  return predictions;
}

/// Plot-ready correlogram: lag,acf,pacf,conf_band.
inline void write_correlogram_csv(std::ostream& out, const CorrelogramReport& report) {
  if (report.pacf.size() != report.acf.size()) {
    throw std::invalid_argument("write_correlogram_csv: report is missing the pacf part");
  }
  out << "lag,acf,pacf,conf_band\n";
  for (std::size_t lag = 0; lag <= report.max_lag; ++lag) {
    out << lag << ',' << format_double(report.acf[lag]) << ',' << format_double(report.pacf[lag])
        << ',' << format_double(report.confidence_band) << '\n';
  }
}

/// Key-value summary of a fitted model.
inline void write_ar_summary_csv(std::ostream& out, const ArModel& model) {
  out << "key,value\n";
  out << "model,ar\n";
  out << "order," << model.order << '\n';
  out << "differencing," << model.differencing << '\n';
  out << "intercept," << format_double(model.intercept) << '\n';
  for (std::size_t j = 0; j < model.coefficients.size(); ++j) {
    out << "phi_" << (j + 1) << ',' << format_double(model.coefficients[j]) << '\n';
  }
  out << "residual_variance," << format_double(model.residual_variance) << '\n';
  out << "n_obs," << model.n_obs << '\n';
  out << "bic," << format_double(model.bic) << '\n';
}

inline void write_var_summary_csv(std::ostream& out, const VarModel& model) {
  out << "key,value\n";
  out << "model,var\n";
  out << "dimension," << model.dimension << '\n';
  out << "order," << model.order << '\n';
  out << "differencing," << model.differencing << '\n';
  for (std::size_t i = 0; i < model.dimension; ++i) {
    out << "intercept_" << i << ',' << format_double(model.intercept[i]) << '\n';
  }
  for (std::size_t m = 0; m < model.order; ++m) {
    for (std::size_t i = 0; i < model.dimension; ++i) {
      for (std::size_t j = 0; j < model.dimension; ++j) {
        out << "a" << (m + 1) << '_' << i << '_' << j << ','
            << format_double(model.lag_coefficients[m](i, j)) << '\n';
      }
    }
  }
  for (std::size_t i = 0; i < model.dimension; ++i) {
    for (std::size_t j = 0; j < model.dimension; ++j) {
      out << "sigma_" << i << '_' << j << ','
          << format_double(model.residual_covariance(i, j)) << '\n';
    }
  }
  out << "n_obs," << model.n_obs << '\n';
  out << "bic," << format_double(model.bic) << '\n';
}

}  // namespace p2prisk
