// Command-line front door: synth | ingest | train | baseline | compare.
// Exit codes: 0 success, 1 usage/config, 2 data, 3 numerical.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "p2prisk/errors.hpp"
#include "p2prisk/eval.hpp"
#include "p2prisk/ingest.hpp"
#include "p2prisk/recurrent.hpp"
#include "p2prisk/synth.hpp"
#include "p2prisk/timeseries.hpp"

namespace {

namespace fs = std::filesystem;
using namespace p2prisk;

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open input file: " + path);
  return in;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw config_error("cannot open output file: " + path.string());
  return out;
}

fs::path prepare_out_dir(const std::string& out_dir) {
  fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw config_error("cannot create output directory: " + out_dir);
  return dir;
}

/// CLI11 only processes config files attached to the top-level app, so each
/// subcommand applies its own file here. Explicit flags keep priority, and
/// option validators still run via the option callback.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  std::vector<CLI::ConfigItem> items;
  try {
    items = cmd->get_config_formatter()->from_file(path);
  } catch (const CLI::FileError& e) {
    throw config_error(e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty()) {
      throw config_error("config: sections are not supported, use plain keys: " + item.fullname());
    }
    if (item.name == "config") {
      throw config_error("config: nested config files are not supported");
    }
    CLI::Option* opt = cmd->get_option_no_throw("--" + item.name);
    if (opt == nullptr) throw config_error("config: unknown key '" + item.name + "'");
    if (opt->count() > 0) continue;
    if (item.inputs.empty()) {
      opt->add_result("true");
    } else {
      for (const auto& input : item.inputs) opt->add_result(input);
    }
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw config_error("config: key '" + item.name + "': " + e.what());
    }
  }
}

void require_option(const std::string& subcommand, const std::string& flag,
                    const std::string& value) {
  if (value.empty()) throw config_error(subcommand + ": " + flag + " is required");
}

struct SynthArgs {
  SynthConfig config;
  std::string out_dir;
  std::string config_path;
};

struct IngestArgs {
  std::string loans_path;
  std::string macro_path;
  std::string status_map_path;
  double sparse_threshold = 0.8;
  std::string out_dir;
  std::string config_path;
};

struct TrainArgs {
  std::string series_path;
  bool use_macro = false;
  TrainConfig config;
  double split_ratio = 0.8;
  std::string out_dir;
  std::string config_path;
};

struct BaselineArgs {
  std::string series_path;
  std::vector<std::size_t> ar_orders = {1, 2, 3};
  std::size_t differencing = 1;
  std::size_t max_lag = 24;
  bool use_macro = false;
  double split_ratio = 0.8;
  std::string out_dir;
  std::string config_path;
};

struct CompareArgs {
  std::string series_path;
  std::string loans_path;
  std::string macro_path;
  std::string status_map_path;
  double sparse_threshold = 0.8;
  CompareConfig config;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string config_path;
};

void run_synth(const SynthArgs& args) {
  const fs::path dir = prepare_out_dir(args.out_dir);
  std::ofstream loans = open_output(dir / "loans.csv");
  std::ofstream macro = open_output(dir / "macro.csv");
  synth_generator(args.config, loans, macro);
  std::cerr << "wrote " << (dir / "loans.csv").string() << " and " << (dir / "macro.csv").string()
            << "\n";
}

/// Shared by ingest and compare --loans: raw loan CSV through the whole
/// preprocessing pipeline to a monthly series.
MonthlySeries build_series(const std::string& loans_path, const std::string& macro_path,
                           const std::string& status_map_path, double sparse_threshold,
                           PipelineReport& report, std::vector<RankSumRow>* eda_rows) {
  std::ifstream loans_in = open_input(loans_path);
  const Schema schema = Schema::lending_club();
  const std::vector<LoanRecord> records = parse_loans(loans_in, schema, &report);

  StatusMap status_map = default_status_map();
  if (!status_map_path.empty()) {
    std::ifstream map_in = open_input(status_map_path);
    status_map = parse_status_map(map_in);
  }
  const std::vector<ResolvedLoan> resolved = filter_and_encode_target(records, status_map);
  if (resolved.empty()) throw data_error("no resolved loans after status filtering");

  FeatureFrame frame = make_frame(resolved, schema);
  frame = drop_sparse_features(frame, sparse_threshold, &report);
  if (eda_rows) *eda_rows = categorical_rank_sum_report(frame);
  frame = one_hot_encode(frame, &report);
  frame = impute(frame, &report);
  MonthlySeries series = aggregate_monthly(frame, &report);

  if (!macro_path.empty()) {
    std::ifstream macro_in = open_input(macro_path);
    series = merge_macro(series, macro_in);
  }
  return series;
}

void write_pipeline_report(std::ostream& out, const PipelineReport& report) {
  for (const auto& line : report.notes) out << line << '\n';
}

void write_eda_csv(std::ostream& out, const std::vector<RankSumRow>& rows) {
  out << "feature,level_a,level_b,n_a,n_b,u_statistic,p_value\n";
  for (const auto& row : rows) {
    out << csv_escape(row.feature) << ',' << csv_escape(row.level_a) << ','
        << csv_escape(row.level_b) << ',' << row.n_a << ',' << row.n_b << ','
        << format_double(row.u_statistic) << ',' << format_double(row.p_value) << '\n';
  }
}

void run_ingest(const IngestArgs& args) {
  const fs::path dir = prepare_out_dir(args.out_dir);
  PipelineReport report;
  std::vector<RankSumRow> eda_rows;
  const MonthlySeries series = build_series(args.loans_path, args.macro_path,
                                            args.status_map_path, args.sparse_threshold, report,
                                            &eda_rows);
  {
    std::ofstream out = open_output(dir / "series.csv");
    write_series_csv(out, series);
  }
  {
    std::ofstream out = open_output(dir / "eda_ranksum.csv");
    write_eda_csv(out, eda_rows);
  }
  {
    std::ofstream out = open_output(dir / "pipeline_report.txt");
    write_pipeline_report(out, report);
  }
  std::cerr << "aggregated " << series.month_count() << " months into "
            << (dir / "series.csv").string() << "\n";
}

void run_train(const TrainArgs& args) {
  const fs::path dir = prepare_out_dir(args.out_dir);
  std::ifstream in = open_input(args.series_path);
  const MonthlySeries series = read_series_csv(in);
  if (args.use_macro && !series.macro) {
    throw data_error("train: --use-macro given but the series has no unemp_rate column");
  }
  const SplitSpec split = chrono_split(series, args.split_ratio);
  const ScalerParams scaler = fit_scaler(series, split.train_month_count);
  const MonthlySeries scaled = apply_scaler(series, scaler);
  const TrainResult result =
      train(scaled, scaler, split.train_month_count, args.config, args.use_macro);
  {
    std::ofstream out = open_output(dir / "checkpoint.json");
    save_checkpoint(out, result.params, args.config, scaler, args.use_macro);
  }
  {
    std::ofstream out = open_output(dir / "loss_history.csv");
    write_loss_history_csv(out, result.history);
  }
  if (!result.history.empty()) {
    const EpochLoss& last = result.history.back();
    std::cerr << "epoch " << last.epoch << ": train rmse " << format_double(last.train_rmse)
              << ", test rmse " << format_double(last.test_rmse) << "\n";
  }
}

void run_baseline(const BaselineArgs& args) {
  const fs::path dir = prepare_out_dir(args.out_dir);
  std::ifstream in = open_input(args.series_path);
  const MonthlySeries series = read_series_csv(in);
  const SplitSpec split = chrono_split(series, args.split_ratio);
  const Vector train_levels(series.default_rate.begin(),
                            series.default_rate.begin() +
                                static_cast<std::ptrdiff_t>(split.train_month_count));
  const Vector diffs = difference(train_levels, args.differencing);

  const std::size_t max_lag = std::min(args.max_lag, diffs.size() - 1);
  const CorrelogramReport report = correlogram(diffs, max_lag);
  {
    std::ofstream out = open_output(dir / "correlogram.csv");
    write_correlogram_csv(out, report);
  }

  ArModel ar = select_ar_order(diffs, args.ar_orders);
  ar.differencing = args.differencing;
  {
    std::ofstream out = open_output(dir / "ar_summary.csv");
    write_ar_summary_csv(out, ar);
  }
  std::cerr << "selected AR(" << ar.order << ") with bic " << format_double(ar.bic) << "\n";

  if (args.use_macro) {
    if (!series.macro) {
      throw data_error("baseline: --use-macro given but the series has no unemp_rate column");
    }
    Matrix joint(split.train_month_count, 2);
    for (std::size_t t = 0; t < split.train_month_count; ++t) {
      joint(t, 0) = series.default_rate[t];
      joint(t, 1) = (*series.macro)[t];
    }
    Matrix joint_diff(split.train_month_count - args.differencing, 2);
    for (std::size_t j = 0; j < 2; ++j) {
      Vector column(split.train_month_count);
      for (std::size_t t = 0; t < split.train_month_count; ++t) column[t] = joint(t, j);
      const Vector diffed = difference(column, args.differencing);
      for (std::size_t t = 0; t < diffed.size(); ++t) joint_diff(t, j) = diffed[t];
    }
    VarModel best;
    bool have_best = false;
    for (std::size_t p : args.ar_orders) {
      VarModel candidate = fit_var(joint_diff, p);
      if (!have_best || candidate.bic < best.bic) {
        best = std::move(candidate);
        have_best = true;
      }
    }
    best.differencing = args.differencing;
    std::ofstream out = open_output(dir / "var_summary.csv");
    write_var_summary_csv(out, best);
    std::cerr << "selected VAR(" << best.order << ") with bic " << format_double(best.bic) << "\n";
  }
}

void run_compare(const CompareArgs& args) {
  const fs::path dir = prepare_out_dir(args.out_dir);
  MonthlySeries series;
  if (!args.series_path.empty()) {
    std::ifstream in = open_input(args.series_path);
    series = read_series_csv(in);
  } else {
    PipelineReport report;
    series = build_series(args.loans_path, args.macro_path, args.status_map_path,
                          args.sparse_threshold, report, nullptr);
  }
  const ForecastReport report = compare_models(series, args.config, args.seed);
  {
    std::ofstream out = open_output(dir / "model_rmse.csv");
    write_model_rmse_csv(out, report);
  }
  {
    std::ofstream out = open_output(dir / "trend.csv");
    write_trend_csv(out, report);
  }
  for (const auto& model : report.models) {
    std::cerr << model.name << ": train rmse " << format_double(model.train_rmse)
              << ", test rmse " << format_double(model.test_rmse) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monthly default-rate forecasting toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a deterministic synthetic fixture");
  synth_cmd->add_option("--config", synth_args.config_path, "Key=value config file");
  synth_cmd->add_option("--seed", synth_args.config.seed, "RNG seed");
  synth_cmd->add_option("--n-loans", synth_args.config.n_loans, "Number of loan records")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--n-months", synth_args.config.n_months, "Number of calendar months")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--macro-effect", synth_args.config.macro_effect,
                        "Strength of the macro rate in the default probability");
  synth_cmd->add_option("--missing-rate", synth_args.config.missing_rate,
                        "Per-cell missingness probability")
      ->check(CLI::Range(0.0, 0.5));
  synth_cmd->add_option("--out-dir", synth_args.out_dir, "Output directory");

  IngestArgs ingest_args;
  CLI::App* ingest_cmd =
      app.add_subcommand("ingest", "Aggregate loan-level data to a monthly series");
  ingest_cmd->add_option("--config", ingest_args.config_path, "Key=value config file");
  ingest_cmd->add_option("--loans", ingest_args.loans_path, "Loan-level CSV");
  ingest_cmd->add_option("--macro", ingest_args.macro_path, "Monthly macro CSV (month,unemp_rate)");
  ingest_cmd->add_option("--status-map", ingest_args.status_map_path,
                         "CSV overriding the loan_status -> outcome table");
  ingest_cmd->add_option("--sparse-threshold", ingest_args.sparse_threshold,
                         "Drop columns with a higher missing fraction")
      ->check(CLI::Range(std::nexttoward(0.0, 1.0), 1.0));
  ingest_cmd->add_option("--out-dir", ingest_args.out_dir, "Output directory");

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "Train the sequence model on a series CSV");
  train_cmd->add_option("--config", train_args.config_path, "Key=value config file");
  train_cmd->add_option("--series", train_args.series_path, "Aggregated series CSV");
  train_cmd->add_flag("--use-macro", train_args.use_macro, "Feed unemp_rate as an extra input");
  train_cmd->add_option("--hidden", train_args.config.hidden_size, "Hidden units")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", train_args.config.batch_size, "Minibatch size")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", train_args.config.epochs, "Training epochs");
  train_cmd->add_option("--lookback", train_args.config.lookback, "Input window length in months")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--learning-rate", train_args.config.learning_rate, "Adam step size")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train_args.config.seed, "RNG seed");
  train_cmd->add_option("--split-ratio", train_args.split_ratio, "Chronological train fraction")
      ->check(CLI::Range(std::nexttoward(0.0, 1.0), std::nexttoward(1.0, 0.0)));
  train_cmd->add_option("--out-dir", train_args.out_dir, "Output directory");

  BaselineArgs baseline_args;
  CLI::App* baseline_cmd =
      app.add_subcommand("baseline", "Correlogram diagnostics and AR/VAR baselines");
  baseline_cmd->add_option("--config", baseline_args.config_path, "Key=value config file");
  baseline_cmd->add_option("--series", baseline_args.series_path, "Aggregated series CSV");
  baseline_cmd->add_option("--ar-orders", baseline_args.ar_orders, "Candidate AR orders")
      ->delimiter(',');
  baseline_cmd->add_option("--differencing", baseline_args.differencing,
                           "First-difference passes before fitting")
      ->check(CLI::Range(std::size_t{0}, std::size_t{1}));
  baseline_cmd->add_option("--max-lag", baseline_args.max_lag, "Correlogram depth")
      ->check(CLI::PositiveNumber);
  baseline_cmd->add_flag("--use-macro", baseline_args.use_macro,
                         "Also fit a VAR on (default_rate, unemp_rate)");
  baseline_cmd->add_option("--split-ratio", baseline_args.split_ratio,
                           "Chronological train fraction")
      ->check(CLI::Range(std::nexttoward(0.0, 1.0), std::nexttoward(1.0, 0.0)));
  baseline_cmd->add_option("--out-dir", baseline_args.out_dir, "Output directory");

  CompareArgs compare_args;
  CLI::App* compare_cmd =
      app.add_subcommand("compare", "Train both sequence variants and the AR baseline");
  compare_cmd->add_option("--config", compare_args.config_path, "Key=value config file");
  CLI::Option* series_opt =
      compare_cmd->add_option("--series", compare_args.series_path, "Aggregated series CSV");
  CLI::Option* loans_opt =
      compare_cmd->add_option("--loans", compare_args.loans_path, "Loan-level CSV");
  compare_cmd->add_option("--macro", compare_args.macro_path, "Monthly macro CSV")
      ->needs(loans_opt);
  compare_cmd->add_option("--status-map", compare_args.status_map_path,
                          "CSV overriding the loan_status -> outcome table");
  compare_cmd->add_option("--sparse-threshold", compare_args.sparse_threshold,
                          "Drop columns with a higher missing fraction");
  compare_cmd->add_option("--hidden", compare_args.config.lstm.hidden_size, "Hidden units")
      ->check(CLI::PositiveNumber);
  compare_cmd->add_option("--batch-size", compare_args.config.lstm.batch_size, "Minibatch size")
      ->check(CLI::PositiveNumber);
  compare_cmd->add_option("--epochs", compare_args.config.lstm.epochs, "Training epochs");
  compare_cmd
      ->add_option("--lookback", compare_args.config.lstm.lookback,
                   "Input window length in months")
      ->check(CLI::PositiveNumber);
  compare_cmd
      ->add_option("--learning-rate", compare_args.config.lstm.learning_rate, "Adam step size")
      ->check(CLI::PositiveNumber);
  compare_cmd->add_option("--ar-orders", compare_args.config.ar_orders, "Candidate AR orders")
      ->delimiter(',');
  compare_cmd
      ->add_option("--differencing", compare_args.config.ar_differencing,
                   "First-difference passes for the AR baseline")
      ->check(CLI::Range(std::size_t{0}, std::size_t{1}));
  compare_cmd
      ->add_option("--split-ratio", compare_args.config.split_ratio,
                   "Chronological train fraction")
      ->check(CLI::Range(std::nexttoward(0.0, 1.0), std::nexttoward(1.0, 0.0)));
  compare_cmd->add_option("--seed", compare_args.seed, "RNG seed");
  compare_cmd->add_option("--out-dir", compare_args.out_dir, "Output directory");
  series_opt->excludes(loans_opt);

  try {
    app.parse(argc, argv);

    if (app.got_subcommand(synth_cmd)) {
      apply_config_file(synth_cmd, synth_args.config_path);
      require_option("synth", "--out-dir", synth_args.out_dir);
      run_synth(synth_args);
    } else if (app.got_subcommand(ingest_cmd)) {
      apply_config_file(ingest_cmd, ingest_args.config_path);
      require_option("ingest", "--loans", ingest_args.loans_path);
      require_option("ingest", "--out-dir", ingest_args.out_dir);
      run_ingest(ingest_args);
    } else if (app.got_subcommand(train_cmd)) {
      apply_config_file(train_cmd, train_args.config_path);
      require_option("train", "--series", train_args.series_path);
      require_option("train", "--out-dir", train_args.out_dir);
      run_train(train_args);
    } else if (app.got_subcommand(baseline_cmd)) {
      apply_config_file(baseline_cmd, baseline_args.config_path);
      require_option("baseline", "--series", baseline_args.series_path);
      require_option("baseline", "--out-dir", baseline_args.out_dir);
      run_baseline(baseline_args);
    } else if (app.got_subcommand(compare_cmd)) {
      apply_config_file(compare_cmd, compare_args.config_path);
      require_option("compare", "--out-dir", compare_args.out_dir);
      if (!compare_args.series_path.empty() && !compare_args.loans_path.empty()) {
        throw config_error("compare: --series and --loans are mutually exclusive");
      }
      if (compare_args.series_path.empty() && compare_args.loans_path.empty()) {
        throw config_error("compare: provide --series or --loans with --macro");
      }
      if (!compare_args.loans_path.empty() && compare_args.macro_path.empty()) {
        throw config_error("compare: --loans requires --macro (the comparison needs the macro column)");
      }
      run_compare(compare_args);
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
