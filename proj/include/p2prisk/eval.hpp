#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "p2prisk/csv.hpp"
#include "p2prisk/errors.hpp"
#include "p2prisk/ingest.hpp"
#include "p2prisk/numerics.hpp"
#include "p2prisk/recurrent.hpp"
#include "p2prisk/timeseries.hpp"

namespace p2prisk {

struct SplitSpec {
  std::size_t train_month_count = 0;
  std::size_t test_month_count = 0;
  double ratio = 0.8;
};

/// Strictly chronological split; the boundary is floor(n * ratio).
inline SplitSpec chrono_split(std::size_t month_count, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("chrono_split: ratio must be in (0,1)");
  }
  SplitSpec split;
  split.ratio = ratio;
  split.train_month_count = static_cast<std::size_t>(std::floor(static_cast<double>(month_count) * ratio));
  split.test_month_count = month_count - split.train_month_count;
  if (split.train_month_count == 0 || split.test_month_count == 0) {
    throw data_error("chrono_split: split of " + std::to_string(month_count) +
                     " months at ratio " + format_double(ratio) + " leaves an empty side");
  }
  return split;
}

inline SplitSpec chrono_split(const MonthlySeries& series, double ratio) {
  return chrono_split(series.month_count(), ratio);
}

/// Root mean squared error in the units of its arguments.
inline double rmse(const Vector& predicted, const Vector& actual) {
  if (predicted.size() != actual.size()) throw std::invalid_argument("rmse: length mismatch");
  if (predicted.empty()) throw std::invalid_argument("rmse: empty vectors");
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double err = predicted[i] - actual[i];
    sum_sq += err * err;
  }
  return std::sqrt(sum_sq / static_cast<double>(predicted.size()));
}

struct CompareConfig {
  TrainConfig lstm;  // shared by both variants; per-model seeds derive from the run seed
  std::vector<std::size_t> ar_orders = {1, 2, 3};
  std::size_t ar_differencing = 1;
  double split_ratio = 0.8;
};

/// Side-by-side result over a shared month range: actuals plus one
/// prediction column per model, with RMSE split at the train boundary.
struct ForecastReport {
  struct ModelResult {
    std::string name;
    double train_rmse = 0.0;
    double test_rmse = 0.0;
    Vector predicted;  // parallel to months
  };

  SplitSpec split;
  std::uint64_t seed = 0;
  std::size_t first_month = 0;           // series index of months.front()
  std::vector<YearMonth> months;         // common coverage across all models
  Vector actual;                         // original default-rate units
  std::vector<ModelResult> models;
  std::size_t ar_order_selected = 0;
};

/// The comparison protocol: one chronological split shared by the LSTM
/// without macro, the LSTM with macro, and the BIC-selected AR baseline.
/// Scaling and AR fitting see only the training window.
inline ForecastReport compare_models(const MonthlySeries& series, const CompareConfig& config,
                                     std::uint64_t seed) {
  if (!series.macro) throw data_error("compare_models: series has no macro column");

  ForecastReport report;
  report.seed = seed;
  report.split = chrono_split(series, config.split_ratio);
  const std::size_t n = series.month_count();
  const std::size_t train_count = report.split.train_month_count;
  if (train_count < config.lstm.lookback + 1) {
    throw data_error("compare_models: training window of " + std::to_string(train_count) +
                     " months is shorter than lookback+1 = " +
                     std::to_string(config.lstm.lookback + 1));
  }

  const ScalerParams scaler = fit_scaler(series, train_count);
  const MonthlySeries scaled = apply_scaler(series, scaler);

  Rng root(seed);
  TrainConfig lstm1_config = config.lstm;
  lstm1_config.seed = root.next_u64();
  TrainConfig lstm2_config = config.lstm;
  lstm2_config.seed = root.next_u64();

  const TrainResult lstm1 = train(scaled, scaler, train_count, lstm1_config, false);
  const TrainResult lstm2 = train(scaled, scaler, train_count, lstm2_config, true);

  const Vector train_diffs = difference(
      Vector(series.default_rate.begin(),
             series.default_rate.begin() + static_cast<std::ptrdiff_t>(train_count)),
      config.ar_differencing);
  ArModel ar_model = select_ar_order(train_diffs, config.ar_orders);
  ar_model.differencing = config.ar_differencing;
  report.ar_order_selected = ar_model.order;

  const std::size_t first =
      std::max(config.lstm.lookback, ar_model.order + ar_model.differencing);
  if (first >= train_count) {
    throw data_error("compare_models: no training months left after the model warm-up window");
  }
  report.first_month = first;
  for (std::size_t t = first; t < n; ++t) {
    report.months.push_back(series.months[t]);
    report.actual.push_back(series.default_rate[t]);
  }

  auto add_model = [&](std::string name, Vector predicted) {
    ForecastReport::ModelResult result;
    result.name = std::move(name);
    const std::size_t train_len = train_count - first;
    result.train_rmse = rmse(Vector(predicted.begin(), predicted.begin() + static_cast<std::ptrdiff_t>(train_len)),
                             Vector(report.actual.begin(), report.actual.begin() + static_cast<std::ptrdiff_t>(train_len)));
    result.test_rmse = rmse(Vector(predicted.begin() + static_cast<std::ptrdiff_t>(train_len), predicted.end()),
                            Vector(report.actual.begin() + static_cast<std::ptrdiff_t>(train_len), report.actual.end()));
    result.predicted = std::move(predicted);
    report.models.push_back(std::move(result));
  };

  add_model("lstm1", predict(lstm1.params, scaled, scaler, config.lstm.lookback, false, first, n - 1));
  add_model("lstm2", predict(lstm2.params, scaled, scaler, config.lstm.lookback, true, first, n - 1));
  add_model("ar", forecast_one_step_rolling(ar_model, series.default_rate, first, n));
  return report;
}

/// The side-by-side RMSE table: model,train_rmse,test_rmse.
inline void write_model_rmse_csv(std::ostream& out, const ForecastReport& report) {
  out << "model,train_rmse,test_rmse\n";
  for (const auto& model : report.models) {
    out << model.name << ',' << format_double(model.train_rmse) << ','
        << format_double(model.test_rmse) << '\n';
  }
}

/// Plot-ready trend data: month,actual,<one column per model>.
inline void write_trend_csv(std::ostream& out, const ForecastReport& report) {
  out << "month,actual";
  for (const auto& model : report.models) out << ',' << model.name;
  out << '\n';
  for (std::size_t i = 0; i < report.months.size(); ++i) {
    out << report.months[i].str() << ',' << format_double(report.actual[i]);
    for (const auto& model : report.models) out << ',' << format_double(model.predicted[i]);
    out << '\n';
  }
}

}  // namespace p2prisk
