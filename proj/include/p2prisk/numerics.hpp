#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace p2prisk {

using Vector = std::vector<double>;

/// Deterministic seeded generator based on SplitMix64 (Steele, Lea & Flood;
/// reference constants 0x9e3779b97f4a7c15 / 0xbf58476d1ce4e5b9 /
/// 0x94d049bb133111eb). The stream is a pure function of the seed, so runs
/// are bit-identical across platforms. Reference vectors are frozen in the
/// test suite and listed in the README.
///
/// A generator is single-owner: never share one instance across threads.
/// Derive child streams with split() instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform draw in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal draw via Box-Muller; the paired value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    const double angle = 2.0 * kPi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  /// Unbiased integer draw in [0, n). Requires n > 0.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v < threshold);
    return v % n;
  }

  /// Child generator with an independent stream (deterministic per parent state).
  Rng split() { return Rng(next_u64()); }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Seeded in-place Fisher-Yates shuffle.
template <typename T>
void shuffle(Rng& rng, std::vector<T>& items) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[rng.below(i)]);
  }
}

/// Dense row-major matrix of 64-bit reals. Constructors reject NaN/Inf.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) {
      throw std::invalid_argument("Matrix: non-finite fill value");
    }
  }

  Matrix(std::size_t rows, std::size_t cols, Vector data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length must equal rows*cols");
    }
    for (double v : data_) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("Matrix: non-finite entry");
      }
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

  Vector row(std::size_t i) const {
    return Vector(data_.begin() + static_cast<std::ptrdiff_t>(i * cols_),
                  data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols_));
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

/// m * v for an r x c matrix and a length-c vector.
inline Vector matvec(const Matrix& m, const Vector& v) {
  if (m.cols() != v.size()) {
    throw std::invalid_argument("matvec: matrix has " + std::to_string(m.cols()) +
                                " columns but vector has length " + std::to_string(v.size()));
  }
  Vector out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* row = m.row_ptr(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) acc += row[j] * v[j];
    out[i] = acc;
  }
  return out;
}

/// m^T * v for an r x c matrix and a length-r vector.
inline Vector matvec_transpose(const Matrix& m, const Vector& v) {
  if (m.rows() != v.size()) {
    throw std::invalid_argument("matvec_transpose: matrix has " + std::to_string(m.rows()) +
                                " rows but vector has length " + std::to_string(v.size()));
  }
  Vector out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* row = m.row_ptr(i);
    const double vi = v[i];
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += row[j] * vi;
  }
  return out;
}

/// m += a * b^T (rank-one update used by gradient accumulation).
inline void add_outer(Matrix& m, const Vector& a, const Vector& b) {
  if (m.rows() != a.size() || m.cols() != b.size()) {
    throw std::invalid_argument("add_outer: shape mismatch");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    double* row = m.data().data() + i * m.cols();
    const double ai = a[i];
    for (std::size_t j = 0; j < b.size(); ++j) row[j] += ai * b[j];
  }
}

/// Elementwise product of two equal-length vectors.
inline Vector hadamard(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("hadamard: lengths differ (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline void add_in_place(Vector& target, const Vector& other) {
  if (target.size() != other.size()) {
    throw std::invalid_argument("add_in_place: lengths differ");
  }
  for (std::size_t i = 0; i < target.size(); ++i) target[i] += other[i];
}

enum class Activation { sigmoid, tanh, linear };

/// Numerically stable logistic; saturates to 0/1, never NaN for finite input.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double apply_activation(Activation kind, double x) {
  switch (kind) {
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return std::tanh(x);
    case Activation::linear: return x;
  }
  throw std::invalid_argument("apply_activation: unknown activation");
}

inline Vector activation_apply(Activation kind, const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = apply_activation(kind, v[i]);
  return out;
}

/// Glorot-uniform weight matrix: entries uniform in [-L, L], L = sqrt(6/(rows+cols)).
inline Matrix glorot_init(Rng& rng, std::size_t rows, std::size_t cols) {
  if (rows < 1 || cols < 1) {
    throw std::invalid_argument("glorot_init: rows and cols must be >= 1");
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-limit, limit);
  return m;
}

/// Moment buffers and hyperparameters of the adaptive-moment optimizer.
/// Defaults match the common framework settings: lr 0.001, beta1 0.9,
/// beta2 0.999, epsilon 1e-7.
struct AdamState {
  Vector first_moment;
  Vector second_moment;
  long step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;

  AdamState() = default;
  explicit AdamState(std::size_t param_count, double lr = 1e-3)
      : first_moment(param_count, 0.0), second_moment(param_count, 0.0), learning_rate(lr) {}
};

/// One bias-corrected adaptive-moment update, in place.
inline void adam_step(AdamState& state, Vector& params, const Vector& grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/moment shapes disagree");
  }
  ++state.step_count;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

/// Central-difference gradient oracle: (f(p + h e_i) - f(p - h e_i)) / 2h
/// per coordinate. Independent of any analytic backward pass.
inline Vector finite_diff_gradient(const std::function<double(const Vector&)>& loss_fn,
                                   Vector params, double h = 1e-5) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_gradient: h must be positive");
  Vector grad(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double original = params[i];
    params[i] = original + h;
    const double up = loss_fn(params);
    params[i] = original - h;
    const double down = loss_fn(params);
    params[i] = original;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace p2prisk
