#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "p2prisk/csv.hpp"
#include "p2prisk/errors.hpp"
#include "p2prisk/ingest.hpp"
#include "p2prisk/numerics.hpp"

namespace p2prisk {

/// Simple recurrent cell: the state is the output.
struct RnnParams {
  Matrix w;       // H x D
  Matrix u;       // H x H
  Vector b;       // H
  Vector w_proj;  // H
  double b_proj = 0.0;
};

/// o_t = tanh(W x_t + U s_t + b); the returned vector is also s_{t+1}.
inline Vector rnn_step(const RnnParams& params, const Vector& x, const Vector& s) {
  Vector pre = matvec(params.w, x);
  add_in_place(pre, matvec(params.u, s));
  add_in_place(pre, params.b);
  return activation_apply(Activation::tanh, pre);
}

/// Gate parameters for the four-gate cell plus the scalar output head.
/// v_out couples the freshly updated cell state into the output gate.
struct LstmParams {
  std::size_t hidden_size = 0;
  std::size_t input_size = 0;
  Matrix w_forget, u_forget;
  Vector b_forget;
  Matrix w_input, u_input;
  Vector b_input;
  Matrix w_cand, u_cand;
  Vector b_cand;
  Matrix w_out, u_out, v_out;
  Vector b_out;
  Vector w_proj;
  double b_proj = 0.0;
};

inline LstmParams zero_lstm(std::size_t hidden, std::size_t input) {
  if (hidden == 0 || input == 0) throw std::invalid_argument("zero_lstm: sizes must be positive");
  LstmParams p;
  p.hidden_size = hidden;
  p.input_size = input;
  p.w_forget = Matrix(hidden, input);
  p.u_forget = Matrix(hidden, hidden);
  p.b_forget.assign(hidden, 0.0);
  p.w_input = Matrix(hidden, input);
  p.u_input = Matrix(hidden, hidden);
  p.b_input.assign(hidden, 0.0);
  p.w_cand = Matrix(hidden, input);
  p.u_cand = Matrix(hidden, hidden);
  p.b_cand.assign(hidden, 0.0);
  p.w_out = Matrix(hidden, input);
  p.u_out = Matrix(hidden, hidden);
  p.v_out = Matrix(hidden, hidden);
  p.b_out.assign(hidden, 0.0);
  p.w_proj.assign(hidden, 0.0);
  p.b_proj = 0.0;
  return p;
}

/// Glorot-uniform weights, zero biases.
inline LstmParams init_lstm(Rng& rng, std::size_t hidden, std::size_t input) {
  LstmParams p = zero_lstm(hidden, input);
  p.w_forget = glorot_init(rng, hidden, input);
  p.u_forget = glorot_init(rng, hidden, hidden);
  p.w_input = glorot_init(rng, hidden, input);
  p.u_input = glorot_init(rng, hidden, hidden);
  p.w_cand = glorot_init(rng, hidden, input);
  p.u_cand = glorot_init(rng, hidden, hidden);
  p.w_out = glorot_init(rng, hidden, input);
  p.u_out = glorot_init(rng, hidden, hidden);
  p.v_out = glorot_init(rng, hidden, hidden);
  const Matrix proj = glorot_init(rng, 1, hidden);
  p.w_proj.assign(proj.data().begin(), proj.data().end());
  return p;
}

inline std::size_t param_count(const LstmParams& p) {
  const std::size_t h = p.hidden_size;
  const std::size_t d = p.input_size;
  return 4 * h * d + 5 * h * h + 4 * h + h + 1;
}

namespace detail {

template <typename Params, typename Fn>
void for_each_block(Params& p, Fn&& fn) {
  fn(p.w_forget.data());
  fn(p.u_forget.data());
  fn(p.b_forget);
  fn(p.w_input.data());
  fn(p.u_input.data());
  fn(p.b_input);
  fn(p.w_cand.data());
  fn(p.u_cand.data());
  fn(p.b_cand);
  fn(p.w_out.data());
  fn(p.u_out.data());
  fn(p.v_out.data());
  fn(p.b_out);
  fn(p.w_proj);
}

}  // namespace detail

/// Parameter vector layout: forget (W,U,b), input (W,U,b), candidate (W,U,b),
/// output (W,U,V,b), projection (W_y, b_y), matrices row-major.
inline Vector flatten(const LstmParams& params) {
  Vector flat;
  flat.reserve(param_count(params));
  detail::for_each_block(params, [&](const Vector& block) {
    flat.insert(flat.end(), block.begin(), block.end());
  });
  flat.push_back(params.b_proj);
  return flat;
}

inline LstmParams unflatten(const Vector& flat, std::size_t hidden, std::size_t input) {
  LstmParams p = zero_lstm(hidden, input);
  if (flat.size() != param_count(p)) {
    throw std::invalid_argument("unflatten: expected " + std::to_string(param_count(p)) +
                                " values, got " + std::to_string(flat.size()));
  }
  std::size_t at = 0;
  detail::for_each_block(p, [&](Vector& block) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
              flat.begin() + static_cast<std::ptrdiff_t>(at + block.size()), block.begin());
    at += block.size();
  });
  p.b_proj = flat[at];
  return p;
}

/// Everything one step computes, retained for backpropagation.
struct GateTrace {
  Vector x;          // input at this step
  Vector state_in;   // s_t
  Vector cell_in;    // c_t
  Vector forget;     // f_t
  Vector input;      // i_t
  Vector candidate;  // c̃_t
  Vector cell_out;   // c_{t+1}
  Vector output;     // o_t = s_{t+1}
};

struct LstmStepResult {
  Vector output;  // o_t, identical to the next state
  Vector cell;    // c_{t+1}
  GateTrace trace;
};

/// One cell update. The output gate reads the updated cell state.
inline LstmStepResult lstm_step(const LstmParams& p, const Vector& x, const Vector& s,
                                const Vector& c) {
  if (x.size() != p.input_size || s.size() != p.hidden_size || c.size() != p.hidden_size) {
    throw std::invalid_argument("lstm_step: input/state sizes do not match the parameters");
  }
  auto gate = [&](const Matrix& w, const Matrix& u, const Vector& b, Activation act) {
    Vector pre = matvec(w, x);
    add_in_place(pre, matvec(u, s));
    add_in_place(pre, b);
    return activation_apply(act, pre);
  };
  GateTrace trace;
  trace.x = x;
  trace.state_in = s;
  trace.cell_in = c;
  trace.forget = gate(p.w_forget, p.u_forget, p.b_forget, Activation::sigmoid);
  trace.input = gate(p.w_input, p.u_input, p.b_input, Activation::sigmoid);
  trace.candidate = gate(p.w_cand, p.u_cand, p.b_cand, Activation::tanh);

  trace.cell_out.resize(p.hidden_size);
  for (std::size_t j = 0; j < p.hidden_size; ++j) {
    trace.cell_out[j] = trace.forget[j] * c[j] + trace.input[j] * trace.candidate[j];
  }

  Vector pre = matvec(p.w_out, x);
  add_in_place(pre, matvec(p.u_out, s));
  add_in_place(pre, matvec(p.v_out, trace.cell_out));
  add_in_place(pre, p.b_out);
  trace.output = activation_apply(Activation::sigmoid, pre);

  return {trace.output, trace.cell_out, std::move(trace)};
}

struct ForwardResult {
  double prediction = 0.0;
  std::vector<GateTrace> traces;
};

/// Unrolls the cell over the rows of the window (s_0 = c_0 = 0) and projects
/// the final output to a scalar.
inline ForwardResult forward(const LstmParams& p, const Matrix& window) {
  if (window.rows() == 0) throw std::invalid_argument("forward: empty window");
  if (window.cols() != p.input_size) {
    throw std::invalid_argument("forward: window has " + std::to_string(window.cols()) +
                                " columns, parameters expect " + std::to_string(p.input_size));
  }
  ForwardResult result;
  result.traces.reserve(window.rows());
  Vector s(p.hidden_size, 0.0);
  Vector c(p.hidden_size, 0.0);
  for (std::size_t t = 0; t < window.rows(); ++t) {
    LstmStepResult step = lstm_step(p, window.row(t), s, c);
    s = step.output;
    c = step.cell;
    result.traces.push_back(std::move(step.trace));
  }
  result.prediction = p.b_proj;
  for (std::size_t j = 0; j < p.hidden_size; ++j) result.prediction += p.w_proj[j] * s[j];
  return result;
}

/// Sliding supervised samples: the L months strictly preceding each target
/// month form the input window; the target is that month's default rate.
/// Target month indices run from lookback to the end of the series.
struct SupervisedWindows {
  std::vector<Matrix> inputs;              // each lookback x D
  Vector targets;                          // scaled default rate
  std::vector<std::size_t> target_months;  // index into the source series
  std::size_t input_size = 0;

  std::size_t sample_count() const { return targets.size(); }
};

inline SupervisedWindows build_windows(const MonthlySeries& series, std::size_t lookback,
                                       bool use_macro) {
  if (lookback == 0) throw std::invalid_argument("build_windows: lookback must be positive");
  if (use_macro && !series.macro) {
    throw std::invalid_argument("build_windows: series has no macro column");
  }
  if (series.month_count() < lookback + 1) {
    throw data_error("build_windows: series has " + std::to_string(series.month_count()) +
                     " months, need at least lookback+1 = " + std::to_string(lookback + 1));
  }
  SupervisedWindows windows;
  windows.input_size = series.feature_count() + (use_macro ? 1 : 0);
  if (windows.input_size == 0) {
    throw std::invalid_argument("build_windows: series has no input features");
  }
  for (std::size_t target = lookback; target < series.month_count(); ++target) {
    Matrix window(lookback, windows.input_size);
    for (std::size_t r = 0; r < lookback; ++r) {
      const std::size_t month = target - lookback + r;
      for (std::size_t j = 0; j < series.feature_count(); ++j) {
        window(r, j) = series.features(month, j);
      }
      if (use_macro) window(r, series.feature_count()) = (*series.macro)[month];
    }
    windows.inputs.push_back(std::move(window));
    windows.targets.push_back(series.default_rate[target]);
    windows.target_months.push_back(target);
  }
  return windows;
}

/// sqrt of the mean squared residual over the chosen samples.
inline double loss_rmse(const LstmParams& params, const SupervisedWindows& windows,
                        const std::vector<std::size_t>& sample_indices) {
  if (sample_indices.empty()) throw std::invalid_argument("loss_rmse: empty batch");
  double sum_sq = 0.0;
  for (std::size_t idx : sample_indices) {
    const double err = forward(params, windows.inputs[idx]).prediction - windows.targets[idx];
    sum_sq += err * err;
  }
  return std::sqrt(sum_sq / static_cast<double>(sample_indices.size()));
}

struct BackwardResult {
  double loss = 0.0;
  LstmParams grads;
};

/// Exact RMSE gradient over the batch by backpropagation through time,
/// including the output gate's path into the updated cell state and both
/// recurrent paths (state and cell). At zero loss the gradient is zero.
inline BackwardResult backward(const LstmParams& p, const SupervisedWindows& windows,
                               const std::vector<std::size_t>& sample_indices) {
  if (sample_indices.empty()) throw std::invalid_argument("backward: empty batch");
  const std::size_t h = p.hidden_size;

  struct SampleRun {
    ForwardResult fwd;
    double error = 0.0;
  };
  std::vector<SampleRun> runs;
  runs.reserve(sample_indices.size());
  double sum_sq = 0.0;
  for (std::size_t idx : sample_indices) {
    SampleRun run;
    run.fwd = forward(p, windows.inputs[idx]);
    run.error = run.fwd.prediction - windows.targets[idx];
    sum_sq += run.error * run.error;
    runs.push_back(std::move(run));
  }
  const double batch = static_cast<double>(sample_indices.size());
  const double loss = std::sqrt(sum_sq / batch);

  BackwardResult result;
  result.loss = loss;
  result.grads = zero_lstm(p.hidden_size, p.input_size);
  if (loss == 0.0) return result;
  LstmParams& g = result.grads;

  for (const SampleRun& run : runs) {
    // dL/dprediction for this sample, through the sqrt.
    const double d_pred = run.error / (batch * loss);
    const std::vector<GateTrace>& traces = run.fwd.traces;

    Vector d_s(h, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
      g.w_proj[j] += d_pred * traces.back().output[j];
      d_s[j] = d_pred * p.w_proj[j];
    }
    g.b_proj += d_pred;

    Vector d_c(h, 0.0);
    for (std::size_t t = traces.size(); t-- > 0;) {
      const GateTrace& tr = traces[t];

      Vector d_a_out(h);  // pre-activation of the output gate
      for (std::size_t j = 0; j < h; ++j) {
        d_a_out[j] = d_s[j] * tr.output[j] * (1.0 - tr.output[j]);
      }
      add_outer(g.w_out, d_a_out, tr.x);
      add_outer(g.u_out, d_a_out, tr.state_in);
      add_outer(g.v_out, d_a_out, tr.cell_out);
      add_in_place(g.b_out, d_a_out);

      Vector d_cell = matvec_transpose(p.v_out, d_a_out);
      add_in_place(d_cell, d_c);

      Vector d_a_forget(h), d_a_input(h), d_a_cand(h);
      for (std::size_t j = 0; j < h; ++j) {
        const double d_f = d_cell[j] * tr.cell_in[j];
        const double d_i = d_cell[j] * tr.candidate[j];
        const double d_k = d_cell[j] * tr.input[j];
        d_c[j] = d_cell[j] * tr.forget[j];
        d_a_forget[j] = d_f * tr.forget[j] * (1.0 - tr.forget[j]);
        d_a_input[j] = d_i * tr.input[j] * (1.0 - tr.input[j]);
        d_a_cand[j] = d_k * (1.0 - tr.candidate[j] * tr.candidate[j]);
      }
      add_outer(g.w_forget, d_a_forget, tr.x);
      add_outer(g.u_forget, d_a_forget, tr.state_in);
      add_in_place(g.b_forget, d_a_forget);
      add_outer(g.w_input, d_a_input, tr.x);
      add_outer(g.u_input, d_a_input, tr.state_in);
      add_in_place(g.b_input, d_a_input);
      add_outer(g.w_cand, d_a_cand, tr.x);
      add_outer(g.u_cand, d_a_cand, tr.state_in);
      add_in_place(g.b_cand, d_a_cand);

      d_s = matvec_transpose(p.u_out, d_a_out);
      add_in_place(d_s, matvec_transpose(p.u_forget, d_a_forget));
      add_in_place(d_s, matvec_transpose(p.u_input, d_a_input));
      add_in_place(d_s, matvec_transpose(p.u_cand, d_a_cand));
    }
  }
  return result;
}

struct TrainConfig {
  std::size_t hidden_size = 70;
  std::size_t batch_size = 50;
  std::size_t epochs = 1000;
  std::size_t lookback = 12;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// Losses are tracked in both scaled (training) units and original
/// default-rate units; reports use the original units.
struct EpochLoss {
  std::size_t epoch = 0;
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  double train_rmse_scaled = 0.0;
  double test_rmse_scaled = 0.0;
};

struct TrainResult {
  LstmParams params;
  std::vector<EpochLoss> history;
};

/// Minibatch Adam training on a scaled series. Only windows whose target
/// month falls before train_month_count are trained on; later windows are
/// tracked as the test curve.
inline TrainResult train(const MonthlySeries& scaled, const ScalerParams& scaler,
                         std::size_t train_month_count, const TrainConfig& config, bool use_macro) {
  if (config.hidden_size == 0 || config.batch_size == 0 || config.lookback == 0) {
    throw std::invalid_argument("train: hidden_size, batch_size, and lookback must be positive");
  }
  if (train_month_count < config.lookback + 1) {
    throw data_error("train: training series has " + std::to_string(train_month_count) +
                     " months, need at least lookback+1 = " + std::to_string(config.lookback + 1));
  }
  if (train_month_count > scaled.month_count()) {
    throw std::invalid_argument("train: train_month_count exceeds the series length");
  }

  const SupervisedWindows windows = build_windows(scaled, config.lookback, use_macro);
  std::vector<std::size_t> train_set, test_set;
  for (std::size_t i = 0; i < windows.sample_count(); ++i) {
    if (windows.target_months[i] < train_month_count) train_set.push_back(i);
    else test_set.push_back(i);
  }

  Rng root(config.seed);
  Rng init_rng = root.split();
  Rng shuffle_rng = root.split();

  TrainResult result;
  result.params = init_lstm(init_rng, config.hidden_size, windows.input_size);

  const double target_span = scaler.target.max - scaler.target.min;
  auto record = [&](std::size_t epoch) {
    EpochLoss e;
    e.epoch = epoch;
    e.train_rmse_scaled = loss_rmse(result.params, windows, train_set);
    e.train_rmse = target_span * e.train_rmse_scaled;
    if (test_set.empty()) {
      e.test_rmse_scaled = std::numeric_limits<double>::quiet_NaN();
      e.test_rmse = e.test_rmse_scaled;
    } else {
      e.test_rmse_scaled = loss_rmse(result.params, windows, test_set);
      e.test_rmse = target_span * e.test_rmse_scaled;
    }
    result.history.push_back(e);
  };

  Vector flat = flatten(result.params);
  AdamState adam(flat.size(), config.learning_rate);
  std::vector<std::size_t> order = train_set;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(shuffle_rng, order);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(begin + config.batch_size, order.size());
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      const BackwardResult back = backward(result.params, windows, batch);
      adam_step(adam, flat, flatten(back.grads));
      result.params = unflatten(flat, config.hidden_size, windows.input_size);
    }
    record(epoch);
  }
  return result;
}

/// Predictions in original default-rate units for target months in
/// [first_month, last_month]. Each month needs lookback predecessors.
inline Vector predict(const LstmParams& params, const MonthlySeries& scaled,
                      const ScalerParams& scaler, std::size_t lookback, bool use_macro,
                      std::size_t first_month, std::size_t last_month) {
  if (first_month > last_month || last_month >= scaled.month_count()) {
    throw std::invalid_argument("predict: month range out of bounds");
  }
  if (first_month < lookback) {
    throw data_error("predict: month " + scaled.months[first_month].str() + " has only " +
                     std::to_string(first_month) + " predecessor months, lookback needs " +
                     std::to_string(lookback));
  }
  const SupervisedWindows windows = build_windows(scaled, lookback, use_macro);
  Vector out;
  out.reserve(last_month - first_month + 1);
  for (std::size_t month = first_month; month <= last_month; ++month) {
    const std::size_t idx = month - lookback;  // windows are indexed by target month
    const double scaled_pred = forward(params, windows.inputs[idx]).prediction;
    out.push_back(invert_value(scaler.target, scaled_pred));
  }
  return out;
}

/// Versioned checkpoint carrying everything needed to reuse a trained model.
inline void save_checkpoint(std::ostream& out, const LstmParams& params, const TrainConfig& config,
                            const ScalerParams& scaler, bool use_macro) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["hidden_size"] = params.hidden_size;
  j["input_size"] = params.input_size;
  j["use_macro"] = use_macro;
  auto dump_params = [](const Vector& flat) {
    std::vector<std::string> text;
    text.reserve(flat.size());
    for (double v : flat) text.push_back(format_double(v));
    return text;
  };
  j["params"] = dump_params(flatten(params));
  j["config"] = {{"hidden_size", config.hidden_size}, {"batch_size", config.batch_size},
                 {"epochs", config.epochs},           {"lookback", config.lookback},
                 {"learning_rate", config.learning_rate}, {"seed", config.seed}};
  nlohmann::json js;
  js["target"] = {{"min", format_double(scaler.target.min)}, {"max", format_double(scaler.target.max)}};
  js["fitted_from"] = scaler.fitted_from.str();
  js["fitted_to"] = scaler.fitted_to.str();
  js["features"] = nlohmann::json::array();
  for (const FeatureScale& f : scaler.features) {
    js["features"].push_back({{"min", format_double(f.min)}, {"max", format_double(f.max)}});
  }
  if (scaler.macro) {
    js["macro"] = {{"min", format_double(scaler.macro->min)}, {"max", format_double(scaler.macro->max)}};
  }
  j["scaler"] = js;
  out << j.dump(2) << '\n';
}

struct Checkpoint {
  LstmParams params;
  TrainConfig config;
  ScalerParams scaler;
  bool use_macro = false;
};

inline Checkpoint load_checkpoint(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("checkpoint: invalid json: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != 1) {
      throw data_error("checkpoint: unsupported format_version");
    }
    Checkpoint cp;
    const auto hidden = j.at("hidden_size").get<std::size_t>();
    const auto input = j.at("input_size").get<std::size_t>();
    cp.use_macro = j.at("use_macro").get<bool>();
    Vector flat;
    for (const auto& text : j.at("params")) {
      const auto v = parse_double(text.get<std::string>());
      if (!v) throw data_error("checkpoint: unparseable parameter value");
      flat.push_back(*v);
    }
    cp.params = unflatten(flat, hidden, input);
    const auto& jc = j.at("config");
    cp.config.hidden_size = jc.at("hidden_size").get<std::size_t>();
    cp.config.batch_size = jc.at("batch_size").get<std::size_t>();
    cp.config.epochs = jc.at("epochs").get<std::size_t>();
    cp.config.lookback = jc.at("lookback").get<std::size_t>();
    cp.config.learning_rate = jc.at("learning_rate").get<double>();
    cp.config.seed = jc.at("seed").get<std::uint64_t>();
    const auto& js = j.at("scaler");
    auto read_scale = [](const nlohmann::json& node) {
      FeatureScale s;
      const auto lo = parse_double(node.at("min").get<std::string>());
      const auto hi = parse_double(node.at("max").get<std::string>());
      if (!lo || !hi) throw data_error("checkpoint: unparseable scaler bound");
      s.min = *lo;
      s.max = *hi;
      return s;
    };
    cp.scaler.target = read_scale(js.at("target"));
    cp.scaler.fitted_from = YearMonth::parse(js.at("fitted_from").get<std::string>());
    cp.scaler.fitted_to = YearMonth::parse(js.at("fitted_to").get<std::string>());
    for (const auto& node : js.at("features")) cp.scaler.features.push_back(read_scale(node));
    if (js.contains("macro")) cp.scaler.macro = read_scale(js.at("macro"));
    return cp;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("checkpoint: missing or mistyped field: ") + e.what());
  }
}

inline void write_loss_history_csv(std::ostream& out, const std::vector<EpochLoss>& history) {
  out << "epoch,train_rmse,test_rmse,train_rmse_scaled,test_rmse_scaled\n";
  for (const EpochLoss& e : history) {
    out << e.epoch << ',' << format_double(e.train_rmse) << ',' << format_double(e.test_rmse)
        << ',' << format_double(e.train_rmse_scaled) << ',' << format_double(e.test_rmse_scaled)
        << '\n';
  }
}

}  // namespace p2prisk
