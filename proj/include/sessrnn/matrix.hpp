#pragma once

// Dense row-major matrices of doubles and the handful of kernels the
// recurrent network needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sessrnn {

/// Seeded generator with a portable output stream.
///
/// std::mt19937_64 is fully specified by the standard, but the standard
/// distributions are not, so every draw is derived from the raw 64-bit
/// words here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 42) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Unbiased integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t draw;
    do {
      draw = engine_();
    } while (draw >= limit);
    return static_cast<std::size_t>(draw % bound);
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(rows_, cols_));
  }
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ == 0 ? 0 : init.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
      if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() & { return data_; }
  std::span<const double> values() const& { return data_; }
  // A temporary hands over its storage so `for (v : f().values())` stays valid.
  std::vector<double> values() && { return std::move(data_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape() const { return shape_string(rows_, cols_); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: shape mismatch " + a.shape() + " * " + b.shape());
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// Largest double strictly below one; keeps saturated activations inside
// their open ranges.
inline constexpr double kBelowOne = 1.0 - 0x1.0p-53;

inline double sigmoid(double v) {
  double s;
  if (v >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-v));
  } else {
    const double e = std::exp(v);
    s = e / (1.0 + e);
  }
  return std::clamp(s, std::numeric_limits<double>::denorm_min(), kBelowOne);
}

inline double tanh_clamped(double v) { return std::clamp(std::tanh(v), -kBelowOne, kBelowOne); }

/// log(sigmoid(v)) without overflow.
inline double log_sigmoid(double v) {
  return v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
}

inline Matrix sigmoid(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.values()) v = sigmoid(v);
  return y;
}

inline Matrix tanh_map(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.values()) v = tanh_clamped(v);
  return y;
}

/// Half-width of the symmetric initialization interval for a rows x cols
/// weight matrix.
inline double init_scale(std::size_t rows, std::size_t cols) {
  return std::sqrt(6.0 / static_cast<double>(rows + cols));
}

/// i.i.d. uniform values on [-x, x], x = sqrt(6 / (rows + cols)) unless
/// `scale` overrides it.
inline Matrix uniform_init(std::size_t rows, std::size_t cols, Rng& rng, double scale = -1.0) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("uniform_init: empty shape");
  const double x = scale > 0.0 ? scale : init_scale(rows, cols);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-x, x);
  return m;
}

inline Matrix uniform_init(std::size_t rows, std::size_t cols, std::uint64_t seed,
                           double scale = -1.0) {
  Rng rng(seed);
  return uniform_init(rows, cols, rng, scale);
}

inline Matrix row_gather(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= m.rows())
      throw std::out_of_range("row_gather: index " + std::to_string(indices[k]) +
                              " out of range for " + m.shape());
    std::copy_n(m.row(indices[k]).begin(), m.cols(), out.row(k).begin());
  }
  return out;
}

/// m[indices[k]] += delta[k]; repeated indices accumulate.
inline void row_scatter_add(Matrix& m, std::span<const std::size_t> indices, const Matrix& delta) {
  if (delta.rows() != indices.size() || delta.cols() != m.cols())
    throw std::invalid_argument("row_scatter_add: delta " + delta.shape() + " does not fit " +
                                std::to_string(indices.size()) + " rows of " + m.shape());
  for (std::size_t k = 0; k < indices.size(); ++k)
    if (indices[k] >= m.rows())
      throw std::out_of_range("row_scatter_add: index " + std::to_string(indices[k]) +
                              " out of range for " + m.shape());
  for (std::size_t k = 0; k < indices.size(); ++k) axpy(1.0, delta.row(k), m.row(indices[k]));
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace sessrnn
