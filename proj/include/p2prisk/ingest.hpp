#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "p2prisk/csv.hpp"
#include "p2prisk/errors.hpp"
#include "p2prisk/numerics.hpp"

namespace p2prisk {

/// Calendar month, the time unit of the aggregated series.
struct YearMonth {
  int year = 0;
  int month = 1;  // 1..12

  friend auto operator<=>(const YearMonth&, const YearMonth&) = default;

  int serial() const { return year * 12 + (month - 1); }

  static YearMonth from_serial(int s) {
    YearMonth ym;
    ym.year = s / 12;
    ym.month = s % 12 + 1;
    return ym;
  }

  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d", year, month);
    return buf;
  }

  /// Accepts "YYYY-MM" and the vendor export form "Mon-YYYY" (e.g. "Dec-2015").
  static YearMonth parse(std::string_view text) {
    text = trim(text);
    static const char* kNames[12] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                     "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
    YearMonth ym;
    if (text.size() == 7 && text[4] == '-') {  // YYYY-MM
      bool digits = true;
      for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u}) {
        digits = digits && text[i] >= '0' && text[i] <= '9';
      }
      if (digits) {
        ym.year = (text[0] - '0') * 1000 + (text[1] - '0') * 100 + (text[2] - '0') * 10 +
                  (text[3] - '0');
        ym.month = (text[5] - '0') * 10 + (text[6] - '0');
        if (ym.month >= 1 && ym.month <= 12) return ym;
      }
    } else if (text.size() == 8 && text[3] == '-') {  // Mon-YYYY
      for (int m = 0; m < 12; ++m) {
        if (text.substr(0, 3) == kNames[m]) {
          bool digits = true;
          for (std::size_t i = 4; i < 8; ++i) digits = digits && text[i] >= '0' && text[i] <= '9';
          if (!digits) break;
          ym.year = (text[4] - '0') * 1000 + (text[5] - '0') * 100 + (text[6] - '0') * 10 +
                    (text[7] - '0');
          ym.month = m + 1;
          return ym;
        }
      }
    }
    throw data_error("unparseable month '" + std::string(text) +
                     "' (expected YYYY-MM or Mon-YYYY)");
  }
};

/// Maps CSV headers onto the declared loan-record fields.
struct Schema {
  std::string id_column = "id";
  std::string month_column = "issue_d";
  std::string status_column = "loan_status";
  std::vector<std::string> numeric_columns;
  std::vector<std::string> categorical_columns;

  /// The declared feature set of the lending transaction export.
  static Schema lending_club() {
    Schema s;
    s.numeric_columns = {
        "annual_inc",      "collection_recovery_fee", "delinq_amnt", "delinq_2yrs",
        "int_rate",        "installment",             "last_pymnt_amnt", "loan_amnt",
        "open_acc",        "pub_rec",                 "recoveries",  "revol_bal",
        "total_acc",       "total_pymnt",             "total_rec_late_fee"};
    s.categorical_columns = {"home_ownership", "verification_status", "application_type"};
    return s;
  }
};

/// Accumulates human-readable pipeline diagnostics (drop lists, gaps, warnings).
struct PipelineReport {
  std::vector<std::string> notes;
  std::vector<std::string> ignored_columns;
  std::vector<std::string> dropped_columns;
  std::vector<std::string> constant_indicator_columns;
  std::vector<YearMonth> calendar_gaps;

  void note(std::string line) { notes.push_back(std::move(line)); }
};

/// One loan-level transaction row. Optional slots mark missing values;
/// the vectors are parallel to the schema's column lists.
struct LoanRecord {
  std::string id;
  YearMonth issue_month;
  std::string loan_status;
  std::vector<std::optional<double>> numeric;
  std::vector<std::optional<std::string>> categorical;
};

inline std::vector<LoanRecord> parse_loans(std::istream& in, const Schema& schema,
                                           PipelineReport* report = nullptr) {
  const CsvTable table = read_csv(in);

  std::map<std::string, std::size_t> header_index;
  for (std::size_t i = 0; i < table.header.size(); ++i) header_index[table.header[i]] = i;

  auto require = [&](const std::string& name) -> std::size_t {
    auto it = header_index.find(name);
    if (it == header_index.end()) throw data_error("loan csv: missing header column '" + name + "'");
    return it->second;
  };

  const std::size_t id_at = require(schema.id_column);
  const std::size_t month_at = require(schema.month_column);
  const std::size_t status_at = require(schema.status_column);
  std::vector<std::size_t> numeric_at, categorical_at;
  for (const auto& name : schema.numeric_columns) numeric_at.push_back(require(name));
  for (const auto& name : schema.categorical_columns) categorical_at.push_back(require(name));

  if (report) {
    std::set<std::size_t> used{id_at, month_at, status_at};
    used.insert(numeric_at.begin(), numeric_at.end());
    used.insert(categorical_at.begin(), categorical_at.end());
    for (std::size_t i = 0; i < table.header.size(); ++i) {
      if (!used.count(i)) {
        report->ignored_columns.push_back(table.header[i]);
        report->note("ignoring column '" + table.header[i] + "' not in schema");
      }
    }
  }

  std::vector<LoanRecord> records;
  records.reserve(table.rows.size());
  std::map<std::string, std::size_t> id_count;
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size()) {
      throw data_error("loan csv: row with " + std::to_string(row.size()) +
                       " fields, header has " + std::to_string(table.header.size()));
    }
    LoanRecord rec;
    rec.id = std::string(trim(row[id_at]));
    if (rec.id.empty()) throw data_error("loan csv: empty id field");
    ++id_count[rec.id];
    rec.issue_month = YearMonth::parse(row[month_at]);
    rec.loan_status = std::string(trim(row[status_at]));
    rec.numeric.reserve(numeric_at.size());
    for (std::size_t at : numeric_at) rec.numeric.push_back(parse_double(row[at]));
    rec.categorical.reserve(categorical_at.size());
    for (std::size_t at : categorical_at) {
      const auto value = trim(row[at]);
      if (value.empty()) rec.categorical.push_back(std::nullopt);
      else rec.categorical.push_back(std::string(value));
    }
    records.push_back(std::move(rec));
  }

  std::string duplicates;
  for (const auto& [id, count] : id_count) {
    if (count > 1) duplicates += (duplicates.empty() ? "" : ", ") + id;
  }
  if (!duplicates.empty()) throw data_error("loan csv: duplicate ids: " + duplicates);
  return records;
}

enum class LoanOutcome { paid, defaulted, ongoing };

/// Raw status string -> outcome. Statuses absent from the table are errors.
using StatusMap = std::map<std::string, LoanOutcome>;

inline StatusMap default_status_map() {
  return {
      {"Fully Paid", LoanOutcome::paid},
      {"Default", LoanOutcome::defaulted},
      {"Charged Off", LoanOutcome::defaulted},
      {"Current", LoanOutcome::ongoing},
      {"In Grace Period", LoanOutcome::ongoing},
      {"Late (16-30 days)", LoanOutcome::ongoing},
      {"Late (31-120 days)", LoanOutcome::ongoing},
  };
}

/// Reads a "status,outcome" CSV with outcome in {paid, default, ongoing}.
inline StatusMap parse_status_map(std::istream& in) {
  const CsvTable table = read_csv(in);
  if (table.header.size() != 2 || table.header[0] != "status" || table.header[1] != "outcome") {
    throw data_error("status map csv: expected header 'status,outcome'");
  }
  StatusMap map;
  for (const auto& row : table.rows) {
    if (row.size() != 2) throw data_error("status map csv: row does not have two fields");
    const std::string status = std::string(trim(row[0]));
    const std::string outcome = std::string(trim(row[1]));
    LoanOutcome parsed;
    if (outcome == "paid") parsed = LoanOutcome::paid;
    else if (outcome == "default") parsed = LoanOutcome::defaulted;
    else if (outcome == "ongoing") parsed = LoanOutcome::ongoing;
    else throw data_error("status map csv: unknown outcome '" + outcome + "'");
    if (map.count(status)) throw data_error("status map csv: duplicate status '" + status + "'");
    map[status] = parsed;
  }
  if (map.empty()) throw data_error("status map csv: no entries");
  return map;
}

struct ResolvedLoan {
  LoanRecord record;
  int target = 0;  // 0 = fully paid off, 1 = default
};

/// Drops ongoing loans and encodes the remaining statuses to the binary target.
inline std::vector<ResolvedLoan> filter_and_encode_target(const std::vector<LoanRecord>& records,
                                                          const StatusMap& status_map) {
  std::vector<ResolvedLoan> resolved;
  for (const auto& rec : records) {
    auto it = status_map.find(rec.loan_status);
    if (it == status_map.end()) {
      throw data_error("unknown loan_status '" + rec.loan_status + "' not covered by status map");
    }
    if (it->second == LoanOutcome::ongoing) continue;
    resolved.push_back({rec, it->second == LoanOutcome::defaulted ? 1 : 0});
  }
  return resolved;
}

/// Column-major working table between filtering and aggregation. Numeric and
/// categorical columns are kept separately until one-hot encoding folds the
/// categorical ones into indicator groups.
struct FeatureFrame {
  struct OneHotGroup {
    std::string source_column;
    std::size_t first_column = 0;  // index into numeric_names
    std::vector<std::string> levels;
  };

  std::vector<std::string> numeric_names;
  std::vector<std::vector<std::optional<double>>> numeric_columns;
  std::vector<std::string> categorical_names;
  std::vector<std::vector<std::optional<std::string>>> categorical_columns;
  std::vector<int> target;
  std::vector<YearMonth> months;
  std::vector<OneHotGroup> one_hot_groups;

  std::size_t row_count() const { return target.size(); }

  bool has_missing() const {
    for (const auto& col : numeric_columns) {
      for (const auto& cell : col) {
        if (!cell) return true;
      }
    }
    for (const auto& col : categorical_columns) {
      for (const auto& cell : col) {
        if (!cell) return true;
      }
    }
    return false;
  }
};

inline FeatureFrame make_frame(const std::vector<ResolvedLoan>& loans, const Schema& schema) {
  FeatureFrame frame;
  frame.numeric_names = schema.numeric_columns;
  frame.categorical_names = schema.categorical_columns;
  frame.numeric_columns.assign(frame.numeric_names.size(), {});
  frame.categorical_columns.assign(frame.categorical_names.size(), {});
  for (auto& col : frame.numeric_columns) col.reserve(loans.size());
  for (auto& col : frame.categorical_columns) col.reserve(loans.size());
  for (const auto& loan : loans) {
    for (std::size_t j = 0; j < frame.numeric_columns.size(); ++j) {
      frame.numeric_columns[j].push_back(loan.record.numeric[j]);
    }
    for (std::size_t j = 0; j < frame.categorical_columns.size(); ++j) {
      frame.categorical_columns[j].push_back(loan.record.categorical[j]);
    }
    frame.target.push_back(loan.target);
    frame.months.push_back(loan.record.issue_month);
  }
  return frame;
}

/// Removes columns whose missing fraction exceeds the threshold.
inline FeatureFrame drop_sparse_features(const FeatureFrame& frame, double threshold = 0.8,
                                         PipelineReport* report = nullptr) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("drop_sparse_features: threshold must be in (0, 1]");
  }
  const double n = static_cast<double>(frame.row_count());
  FeatureFrame out;
  out.target = frame.target;
  out.months = frame.months;

  auto missing_fraction = [&](const auto& col) {
    if (n == 0) return 0.0;
    std::size_t missing = 0;
    for (const auto& cell : col) {
      if (!cell) ++missing;
    }
    return static_cast<double>(missing) / n;
  };

  for (std::size_t j = 0; j < frame.numeric_columns.size(); ++j) {
    if (missing_fraction(frame.numeric_columns[j]) > threshold) {
      if (report) {
        report->dropped_columns.push_back(frame.numeric_names[j]);
        report->note("dropped sparse column '" + frame.numeric_names[j] + "'");
      }
      continue;
    }
    out.numeric_names.push_back(frame.numeric_names[j]);
    out.numeric_columns.push_back(frame.numeric_columns[j]);
  }
  for (std::size_t j = 0; j < frame.categorical_columns.size(); ++j) {
    if (missing_fraction(frame.categorical_columns[j]) > threshold) {
      if (report) {
        report->dropped_columns.push_back(frame.categorical_names[j]);
        report->note("dropped sparse column '" + frame.categorical_names[j] + "'");
      }
      continue;
    }
    out.categorical_names.push_back(frame.categorical_names[j]);
    out.categorical_columns.push_back(frame.categorical_columns[j]);
  }
  out.one_hot_groups = frame.one_hot_groups;
  return out;
}

/// Replaces every categorical column by one indicator column per observed
/// level (named "col=level", levels sorted). Rows missing the category get
/// an all-missing indicator group, to be filled by impute().
inline FeatureFrame one_hot_encode(const FeatureFrame& frame, PipelineReport* report = nullptr) {
  FeatureFrame out;
  out.numeric_names = frame.numeric_names;
  out.numeric_columns = frame.numeric_columns;
  out.target = frame.target;
  out.months = frame.months;
  out.one_hot_groups = frame.one_hot_groups;

  for (std::size_t j = 0; j < frame.categorical_columns.size(); ++j) {
    const auto& col = frame.categorical_columns[j];
    std::set<std::string> vocabulary;
    for (const auto& cell : col) {
      if (cell) vocabulary.insert(*cell);
    }
    if (vocabulary.empty()) {
      throw data_error("one_hot_encode: column '" + frame.categorical_names[j] +
                       "' has no observed levels");
    }
    FeatureFrame::OneHotGroup group;
    group.source_column = frame.categorical_names[j];
    group.first_column = out.numeric_names.size();
    group.levels.assign(vocabulary.begin(), vocabulary.end());
    if (group.levels.size() == 1 && report) {
      report->constant_indicator_columns.push_back(group.source_column);
      report->note("column '" + group.source_column + "' has a single level; indicator is constant");
    }
    for (const auto& level : group.levels) {
      out.numeric_names.push_back(frame.categorical_names[j] + "=" + level);
      std::vector<std::optional<double>> indicator(col.size());
      for (std::size_t r = 0; r < col.size(); ++r) {
        if (col[r]) indicator[r] = (*col[r] == level) ? 1.0 : 0.0;
      }
      out.numeric_columns.push_back(std::move(indicator));
    }
    out.one_hot_groups.push_back(std::move(group));
  }
  return out;
}

namespace detail {

inline double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

/// Fills numeric columns with the column median and one-hot groups with the
/// modal level's indicator pattern. Idempotent. A column with no observed
/// values cannot be imputed and is an error.
inline FeatureFrame impute(const FeatureFrame& frame, PipelineReport* report = nullptr) {
  if (!frame.categorical_columns.empty()) {
    throw std::invalid_argument("impute: one-hot encode categorical columns first");
  }
  FeatureFrame out = frame;

  // Which numeric columns belong to a one-hot group.
  std::vector<bool> in_group(out.numeric_columns.size(), false);
  for (const auto& group : out.one_hot_groups) {
    for (std::size_t k = 0; k < group.levels.size(); ++k) in_group[group.first_column + k] = true;
  }

  for (std::size_t j = 0; j < out.numeric_columns.size(); ++j) {
    if (in_group[j]) continue;
    auto& col = out.numeric_columns[j];
    std::vector<double> present;
    for (const auto& cell : col) {
      if (cell) present.push_back(*cell);
    }
    if (present.empty()) {
      throw data_error("impute: column '" + out.numeric_names[j] + "' is entirely missing");
    }
    if (present.size() == col.size()) continue;
    const double median = detail::median_of(std::move(present));
    std::size_t filled = 0;
    for (auto& cell : col) {
      if (!cell) {
        cell = median;
        ++filled;
      }
    }
    if (report && filled > 0) {
      report->note("imputed " + std::to_string(filled) + " values in '" + out.numeric_names[j] +
                   "' with median " + format_double(median));
    }
  }

  for (const auto& group : out.one_hot_groups) {
    // Mode = level with the most observed 1s; ties resolve to the first
    // (lexicographically smallest) level.
    std::size_t best = 0;
    std::size_t best_count = 0;
    bool any_observed = false;
    for (std::size_t k = 0; k < group.levels.size(); ++k) {
      const auto& col = out.numeric_columns[group.first_column + k];
      std::size_t count = 0;
      for (const auto& cell : col) {
        if (cell) {
          any_observed = true;
          if (*cell == 1.0) ++count;
        }
      }
      if (count > best_count) {
        best_count = count;
        best = k;
      }
    }
    if (!any_observed) {
      throw data_error("impute: one-hot group '" + group.source_column + "' is entirely missing");
    }
    std::size_t filled = 0;
    for (std::size_t r = 0; r < out.row_count(); ++r) {
      if (!out.numeric_columns[group.first_column][r]) {
        for (std::size_t k = 0; k < group.levels.size(); ++k) {
          out.numeric_columns[group.first_column + k][r] = (k == best) ? 1.0 : 0.0;
        }
        ++filled;
      }
    }
    if (report && filled > 0) {
      report->note("imputed " + std::to_string(filled) + " rows in group '" + group.source_column +
                   "' with mode '" + group.levels[best] + "'");
    }
  }
  return out;
}

/// Date-indexed monthly aggregate: per-feature monthly means, the
/// default-rate target, and the optional macro column.
struct MonthlySeries {
  std::vector<YearMonth> months;  // strictly increasing
  std::vector<std::string> feature_names;
  Matrix features;                    // n_months x n_features
  std::vector<double> default_rate;   // in [0, 1] in original units
  std::optional<std::vector<double>> macro;  // unemp_rate, percent

  std::size_t month_count() const { return months.size(); }
  std::size_t feature_count() const { return feature_names.size(); }
};

/// Collapses the loan-level frame to one row per observed month: features by
/// arithmetic mean, target by the fraction of defaults. Calendar months with
/// no records stay absent and are reported as gaps.
inline MonthlySeries aggregate_monthly(const FeatureFrame& frame, PipelineReport* report = nullptr) {
  if (!frame.categorical_columns.empty()) {
    throw std::invalid_argument("aggregate_monthly: frame still has raw categorical columns");
  }
  if (frame.has_missing()) {
    throw std::invalid_argument("aggregate_monthly: frame must be fully imputed");
  }
  if (frame.row_count() == 0) throw data_error("aggregate_monthly: no records to aggregate");

  struct Accumulator {
    std::vector<double> feature_sums;
    double target_sum = 0.0;
    std::size_t count = 0;
  };
  std::map<YearMonth, Accumulator> by_month;
  const std::size_t n_features = frame.numeric_columns.size();
  for (std::size_t r = 0; r < frame.row_count(); ++r) {
    auto& acc = by_month[frame.months[r]];
    if (acc.feature_sums.empty()) acc.feature_sums.assign(n_features, 0.0);
    for (std::size_t j = 0; j < n_features; ++j) acc.feature_sums[j] += *frame.numeric_columns[j][r];
    acc.target_sum += frame.target[r];
    ++acc.count;
  }

  MonthlySeries series;
  series.feature_names = frame.numeric_names;
  series.features = Matrix(by_month.size(), n_features);
  std::size_t row = 0;
  for (const auto& [month, acc] : by_month) {
    series.months.push_back(month);
    for (std::size_t j = 0; j < n_features; ++j) {
      series.features(row, j) = acc.feature_sums[j] / static_cast<double>(acc.count);
    }
    series.default_rate.push_back(acc.target_sum / static_cast<double>(acc.count));
    ++row;
  }

  if (report && series.months.size() > 1) {
    for (int s = series.months.front().serial(); s <= series.months.back().serial(); ++s) {
      const YearMonth ym = YearMonth::from_serial(s);
      if (!by_month.count(ym)) {
        report->calendar_gaps.push_back(ym);
        report->note("no records for " + ym.str() + "; month left as a gap");
      }
    }
  }
  return series;
}

/// Attaches the monthly macro rate to every series month by matching dates.
inline MonthlySeries merge_macro(const MonthlySeries& series, std::istream& macro_csv) {
  const CsvTable table = read_csv(macro_csv);
  if (table.header.size() != 2 || table.header[0] != "month" || table.header[1] != "unemp_rate") {
    throw data_error("macro csv: expected header 'month,unemp_rate'");
  }
  std::map<YearMonth, double> by_month;
  for (const auto& row : table.rows) {
    if (row.size() != 2) throw data_error("macro csv: row does not have two fields");
    const YearMonth ym = YearMonth::parse(row[0]);
    const auto rate = parse_double(row[1]);
    if (!rate) throw data_error("macro csv: unparseable rate '" + row[1] + "' for " + ym.str());
    if (by_month.count(ym)) throw data_error("macro csv: duplicate month " + ym.str());
    by_month[ym] = *rate;
  }

  std::string missing;
  std::vector<double> macro;
  macro.reserve(series.month_count());
  for (const YearMonth& ym : series.months) {
    auto it = by_month.find(ym);
    if (it == by_month.end()) {
      missing += (missing.empty() ? "" : ", ") + ym.str();
    } else {
      macro.push_back(it->second);
    }
  }
  if (!missing.empty()) throw data_error("macro csv: no rate for series months: " + missing);

  MonthlySeries merged = series;
  merged.macro = std::move(macro);
  return merged;
}

/// Per-column min/max fitted on the training window only.
struct FeatureScale {
  double min = 0.0;
  double max = 0.0;

  bool constant() const { return max == min; }
};

struct ScalerParams {
  std::vector<FeatureScale> features;
  FeatureScale target;
  std::optional<FeatureScale> macro;
  YearMonth fitted_from, fitted_to;
};

inline double scale_value(const FeatureScale& s, double v) {
  if (s.constant()) return 0.0;
  return (v - s.min) / (s.max - s.min);
}

inline double invert_value(const FeatureScale& s, double v) {
  if (s.constant()) return s.min;
  return v * (s.max - s.min) + s.min;
}

/// Fits min-max ranges on the first train_month_count months; the test
/// period never influences the ranges.
inline ScalerParams fit_scaler(const MonthlySeries& series, std::size_t train_month_count) {
  if (train_month_count == 0 || train_month_count > series.month_count()) {
    throw std::invalid_argument("fit_scaler: train_month_count out of range");
  }
  auto fit_column = [&](auto value_at) {
    FeatureScale s{value_at(0), value_at(0)};
    for (std::size_t t = 1; t < train_month_count; ++t) {
      s.min = std::min(s.min, value_at(t));
      s.max = std::max(s.max, value_at(t));
    }
    return s;
  };

  ScalerParams params;
  for (std::size_t j = 0; j < series.feature_count(); ++j) {
    params.features.push_back(fit_column([&](std::size_t t) { return series.features(t, j); }));
  }
  params.target = fit_column([&](std::size_t t) { return series.default_rate[t]; });
  if (series.macro) {
    params.macro = fit_column([&](std::size_t t) { return (*series.macro)[t]; });
  }
  params.fitted_from = series.months.front();
  params.fitted_to = series.months[train_month_count - 1];
  return params;
}

/// Applies x' = (x - min) / (max - min) per column; constant columns map to 0.
/// Values outside the fitted range extrapolate (no clamping).
inline MonthlySeries apply_scaler(const MonthlySeries& series, const ScalerParams& params) {
  if (params.features.size() != series.feature_count()) {
    throw std::invalid_argument("apply_scaler: scaler fitted on a different feature set");
  }
  if (series.macro.has_value() != params.macro.has_value()) {
    throw std::invalid_argument("apply_scaler: macro presence differs from the fitted series");
  }
  MonthlySeries out = series;
  for (std::size_t t = 0; t < series.month_count(); ++t) {
    for (std::size_t j = 0; j < series.feature_count(); ++j) {
      out.features(t, j) = scale_value(params.features[j], series.features(t, j));
    }
    out.default_rate[t] = scale_value(params.target, series.default_rate[t]);
    if (series.macro) (*out.macro)[t] = scale_value(*params.macro, (*series.macro)[t]);
  }
  return out;
}

inline MonthlySeries invert_scaler(const MonthlySeries& series, const ScalerParams& params) {
  if (params.features.size() != series.feature_count()) {
    throw std::invalid_argument("invert_scaler: scaler fitted on a different feature set");
  }
  if (series.macro.has_value() != params.macro.has_value()) {
    throw std::invalid_argument("invert_scaler: macro presence differs from the fitted series");
  }
  MonthlySeries out = series;
  for (std::size_t t = 0; t < series.month_count(); ++t) {
    for (std::size_t j = 0; j < series.feature_count(); ++j) {
      out.features(t, j) = invert_value(params.features[j], series.features(t, j));
    }
    out.default_rate[t] = invert_value(params.target, series.default_rate[t]);
    if (series.macro) (*out.macro)[t] = invert_value(*params.macro, (*series.macro)[t]);
  }
  return out;
}

struct RankSumResult {
  double u_statistic = 0.0;  // U for the first sample
  double p_value = 1.0;      // two-sided
};

namespace detail {

/// Midranks (1-based, ties averaged) of the pooled sample.
inline std::vector<double> midranks(const Vector& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;  // average of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Two-sample Wilcoxon rank-sum (Mann-Whitney U). Exact enumeration over all
/// C(n, n_a) rank assignments when n <= 20, normal approximation with tie
/// correction and continuity correction otherwise.
inline RankSumResult wilcoxon_rank_sum(const Vector& a, const Vector& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wilcoxon_rank_sum: empty sample");
  const std::size_t n_a = a.size();
  const std::size_t n_b = b.size();
  const std::size_t n = n_a + n_b;

  Vector pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<double> ranks = detail::midranks(pooled);

  double rank_sum_a = 0.0;
  for (std::size_t i = 0; i < n_a; ++i) rank_sum_a += ranks[i];
  const double u_obs = rank_sum_a - 0.5 * static_cast<double>(n_a * (n_a + 1));
  const double mean_u = 0.5 * static_cast<double>(n_a * n_b);

  RankSumResult result;
  result.u_statistic = u_obs;

  if (n <= 20) {
    // Exact conditional test: enumerate which pooled positions form sample a.
    const double observed_dev = std::abs(u_obs - mean_u);
    std::vector<std::size_t> pick(n_a);
    for (std::size_t i = 0; i < n_a; ++i) pick[i] = i;
    std::size_t total = 0;
    std::size_t at_least = 0;
    while (true) {
      double rank_sum = 0.0;
      for (std::size_t idx : pick) rank_sum += ranks[idx];
      const double u = rank_sum - 0.5 * static_cast<double>(n_a * (n_a + 1));
      ++total;
      if (std::abs(u - mean_u) >= observed_dev - 1e-9) ++at_least;
      // next combination in lexicographic order
      std::size_t i = n_a;
      while (i > 0 && pick[i - 1] == i - 1 + n - n_a) --i;
      if (i == 0) break;
      ++pick[i - 1];
      for (std::size_t j = i; j < n_a; ++j) pick[j] = pick[j - 1] + 1;
    }
    result.p_value = static_cast<double>(at_least) / static_cast<double>(total);
    return result;
  }

  // Tie-corrected variance of U under the null.
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double nn = static_cast<double>(n);
  const double variance = (static_cast<double>(n_a) * static_cast<double>(n_b) / 12.0) *
                          ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (variance <= 0.0) {
    result.p_value = 1.0;  // all pooled values tied
    return result;
  }
  const double z = std::max(0.0, std::abs(u_obs - mean_u) - 0.5) / std::sqrt(variance);
  result.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return result;
}

/// One pairwise rank-sum comparison of default outcomes between two levels
/// of a categorical feature.
struct RankSumRow {
  std::string feature;
  std::string level_a;
  std::string level_b;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  double u_statistic = 0.0;
  double p_value = 1.0;
};

/// Pairwise rank-sum tests of the binary target across the observed levels
/// of every raw categorical column (pre-encoding exploratory check).
inline std::vector<RankSumRow> categorical_rank_sum_report(const FeatureFrame& frame) {
  std::vector<RankSumRow> rows;
  for (std::size_t j = 0; j < frame.categorical_columns.size(); ++j) {
    const auto& col = frame.categorical_columns[j];
    std::map<std::string, Vector> by_level;
    for (std::size_t r = 0; r < col.size(); ++r) {
      if (col[r]) by_level[*col[r]].push_back(static_cast<double>(frame.target[r]));
    }
    for (auto first = by_level.begin(); first != by_level.end(); ++first) {
      for (auto second = std::next(first); second != by_level.end(); ++second) {
        const RankSumResult r = wilcoxon_rank_sum(first->second, second->second);
        rows.push_back({frame.categorical_names[j], first->first, second->first,
                        first->second.size(), second->second.size(), r.u_statistic, r.p_value});
      }
    }
  }
  return rows;
}

/// Interchange format: month,default_rate[,unemp_rate],<feature...>.
inline void write_series_csv(std::ostream& out, const MonthlySeries& series) {
  out << "month,default_rate";
  if (series.macro) out << ",unemp_rate";
  for (const auto& name : series.feature_names) out << ',' << csv_escape(name);
  out << '\n';
  for (std::size_t t = 0; t < series.month_count(); ++t) {
    out << series.months[t].str() << ',' << format_double(series.default_rate[t]);
    if (series.macro) out << ',' << format_double((*series.macro)[t]);
    for (std::size_t j = 0; j < series.feature_count(); ++j) {
      out << ',' << format_double(series.features(t, j));
    }
    out << '\n';
  }
}

inline MonthlySeries read_series_csv(std::istream& in) {
  const CsvTable table = read_csv(in);
  if (table.header.size() < 2 || table.header[0] != "month" || table.header[1] != "default_rate") {
    throw data_error("series csv: header must start with 'month,default_rate'");
  }
  const bool has_macro = table.header.size() > 2 && table.header[2] == "unemp_rate";
  const std::size_t first_feature = has_macro ? 3 : 2;

  MonthlySeries series;
  series.feature_names.assign(table.header.begin() + static_cast<std::ptrdiff_t>(first_feature),
                              table.header.end());
  if (table.rows.empty()) throw data_error("series csv: no data rows");
  series.features = Matrix(table.rows.size(), series.feature_names.size());
  if (has_macro) series.macro.emplace();

  for (std::size_t t = 0; t < table.rows.size(); ++t) {
    const auto& row = table.rows[t];
    if (row.size() != table.header.size()) {
      throw data_error("series csv: row " + std::to_string(t + 2) + " has wrong field count");
    }
    const YearMonth ym = YearMonth::parse(row[0]);
    if (!series.months.empty() && !(series.months.back() < ym)) {
      throw data_error("series csv: months must be strictly increasing at " + ym.str());
    }
    series.months.push_back(ym);
    const auto rate = parse_double(row[1]);
    if (!rate || *rate < 0.0 || *rate > 1.0) {
      throw data_error("series csv: default_rate out of [0,1] at " + ym.str());
    }
    series.default_rate.push_back(*rate);
    if (has_macro) {
      const auto m = parse_double(row[2]);
      if (!m) throw data_error("series csv: unparseable unemp_rate at " + ym.str());
      series.macro->push_back(*m);
    }
    for (std::size_t j = 0; j < series.feature_count(); ++j) {
      const auto v = parse_double(row[first_feature + j]);
      if (!v) {
        throw data_error("series csv: unparseable value in column '" + series.feature_names[j] +
                         "' at " + ym.str());
      }
      series.features(t, j) = *v;
    }
  }
  return series;
}

}  // namespace p2prisk
