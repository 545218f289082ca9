#pragma once

// Adagrad / rmsprop updates with optional momentum over row-sparse
// gradients, plus inverted dropout masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sessrnn/matrix.hpp"

namespace sessrnn {

/// Gradient of a matrix parameter restricted to the rows it touches.
class RowGrad {
 public:
  RowGrad() = default;
  RowGrad(std::size_t rows, std::size_t cols) : rows_total_(rows), cols_(cols) {}

  static RowGrad dense(std::size_t rows, std::size_t cols) {
    RowGrad g(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) g.row(r);
    return g;
  }

  /// Row `r`, allocated (zero) on first access.
  std::span<double> row(std::size_t r) {
    if (r >= rows_total_)
      throw std::out_of_range("RowGrad: row " + std::to_string(r) + " of " + std::to_string(rows_total_));
    auto [it, inserted] = slot_.try_emplace(r, touched_.size());
    if (inserted) {
      touched_.push_back(r);
      values_.resize(values_.size() + cols_, 0.0);
    }
    return {values_.data() + it->second * cols_, cols_};
  }

  std::size_t rows() const { return rows_total_; }
  std::size_t cols() const { return cols_; }
  const std::vector<std::size_t>& touched_rows() const { return touched_; }
  std::span<const double> slot_values(std::size_t slot) const {
    return {values_.data() + slot * cols_, cols_};
  }

  bool contains(std::size_t r) const { return slot_.count(r) != 0; }

  Matrix to_dense() const {
    Matrix m(rows_total_, cols_);
    for (std::size_t k = 0; k < touched_.size(); ++k) {
      auto v = slot_values(k);
      std::copy(v.begin(), v.end(), m.row(touched_[k]).begin());
    }
    return m;
  }

 private:
  std::size_t rows_total_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> touched_;
  std::unordered_map<std::size_t, std::size_t> slot_;
  std::vector<double> values_;
};

enum class OptimizerKind { adagrad, rmsprop };

inline std::string_view to_string(OptimizerKind k) {
  return k == OptimizerKind::adagrad ? "adagrad" : "rmsprop";
}

inline OptimizerKind parse_optimizer_kind(std::string_view s) {
  if (s == "adagrad") return OptimizerKind::adagrad;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "' (expected adagrad or rmsprop)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adagrad;
  double learning_rate = 0.01;
  double momentum = 0.0;
  double epsilon = 1e-6;
  double rmsprop_decay = 0.9;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
    if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0))
      throw std::invalid_argument("rmsprop decay must be in [0, 1)");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  }
};

/// Per-parameter accumulator (and velocity when momentum is on).
struct OptimState {
  Matrix accumulator;
  Matrix velocity;
};

namespace detail {

inline void ensure_state(OptimState& st, const Matrix& param, double momentum) {
  if (st.accumulator.empty()) st.accumulator = Matrix(param.rows(), param.cols());
  if (momentum > 0.0 && st.velocity.empty()) st.velocity = Matrix(param.rows(), param.cols());
  if (!st.accumulator.same_shape(param))
    throw std::invalid_argument("optimizer state " + st.accumulator.shape() + " does not match parameter " +
                                param.shape());
}

// One row. All-zero gradient rows are skipped entirely, accumulators and
// velocity included, so dense and row-sparse updates agree bit for bit.
inline void update_row(std::span<double> param, std::span<const double> grad, std::span<double> acc,
                       std::span<double> vel, const OptimizerConfig& cfg) {
  bool any = false;
  for (double g : grad) any = any || g != 0.0;
  if (!any) return;
  for (std::size_t c = 0; c < grad.size(); ++c) {
    const double g = grad[c];
    if (cfg.kind == OptimizerKind::adagrad)
      acc[c] += g * g;
    else
      acc[c] = cfg.rmsprop_decay * acc[c] + (1.0 - cfg.rmsprop_decay) * g * g;
    const double step = cfg.learning_rate * g / std::sqrt(acc[c] + cfg.epsilon);
    if (cfg.momentum > 0.0) {
      vel[c] = cfg.momentum * vel[c] + step;
      param[c] -= vel[c];
    } else {
      param[c] -= step;
    }
  }
}

}  // namespace detail

inline void apply_update(Matrix& param, const Matrix& grad, OptimState& st, const OptimizerConfig& cfg) {
  cfg.validate();
  if (!param.same_shape(grad))
    throw std::invalid_argument("gradient " + grad.shape() + " does not match parameter " + param.shape());
  detail::ensure_state(st, param, cfg.momentum);
  for (std::size_t r = 0; r < param.rows(); ++r)
    detail::update_row(param.row(r), grad.row(r), st.accumulator.row(r),
                       cfg.momentum > 0.0 ? st.velocity.row(r) : std::span<double>{}, cfg);
}

inline void apply_update(Matrix& param, const RowGrad& grad, OptimState& st, const OptimizerConfig& cfg) {
  cfg.validate();
  if (grad.rows() != param.rows() || grad.cols() != param.cols())
    throw std::invalid_argument("gradient " + Matrix::shape_string(grad.rows(), grad.cols()) +
                                " does not match parameter " + param.shape());
  detail::ensure_state(st, param, cfg.momentum);
  const auto& rows = grad.touched_rows();
  for (std::size_t k = 0; k < rows.size(); ++k)
    detail::update_row(param.row(rows[k]), grad.slot_values(k), st.accumulator.row(rows[k]),
                       cfg.momentum > 0.0 ? st.velocity.row(rows[k]) : std::span<double>{}, cfg);
}

inline void adagrad_update(Matrix& param, const Matrix& grad, OptimState& st, double lr,
                           double momentum = 0.0, double epsilon = 1e-6) {
  apply_update(param, grad, st, {OptimizerKind::adagrad, lr, momentum, epsilon, 0.9});
}

inline void rmsprop_update(Matrix& param, const Matrix& grad, OptimState& st, double lr, double decay = 0.9,
                           double momentum = 0.0, double epsilon = 1e-6) {
  apply_update(param, grad, st, {OptimizerKind::rmsprop, lr, momentum, epsilon, decay});
}

/// Named optimizer states for a whole parameter set.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  template <typename Grad>
  void step(const std::string& name, Matrix& param, const Grad& grad) {
    apply_update(param, grad, states_[name], cfg_);
  }

  const OptimizerConfig& config() const { return cfg_; }
  const OptimState* state(const std::string& name) const {
    auto it = states_.find(name);
    return it == states_.end() ? nullptr : &it->second;
  }

 private:
  OptimizerConfig cfg_;
  std::map<std::string, OptimState> states_;
};

/// Inverted dropout: in training, each unit is kept with probability
/// 1 - rate and scaled by 1 / (1 - rate); at inference the mask is all ones.
inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  Matrix m(rows, cols, 1.0);
  if (!training || rate == 0.0) return m;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : m.values()) v = rng.bernoulli(1.0 - rate) ? keep_scale : 0.0;
  return m;
}

inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, std::uint64_t seed,
                           bool training) {
  Rng rng(seed);
  return dropout_mask(rows, cols, rate, rng, training);
}

}  // namespace sessrnn
