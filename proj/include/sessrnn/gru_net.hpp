#pragma once

// GRU network over item sequences: 1-of-N (or discounted weighted-sum)
// input, stacked GRU layers, linear output layer scored through tanh.
//
// Forward runs on session-parallel mini-batches; backward computes
// gradients only for the sampled output columns and for the item rows seen
// in the batch. Gradients flow back through a window of cached steps
// (truncated BPTT); a window of one step treats the carried hidden state as
// a constant.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sessrnn/matrix.hpp"
#include "sessrnn/optimizer.hpp"
#include "sessrnn/ranking_loss.hpp"
#include "sessrnn/session_data.hpp"

namespace sessrnn {

enum class InputMode { one_hot, discounted };

inline std::string_view to_string(InputMode m) { return m == InputMode::one_hot ? "one_hot" : "discounted"; }

inline InputMode parse_input_mode(std::string_view s) {
  if (s == "one_hot" || s == "onehot") return InputMode::one_hot;
  if (s == "discounted") return InputMode::discounted;
  throw std::invalid_argument("unknown input mode '" + std::string(s) + "' (expected one_hot or discounted)");
}

/// Weighted item coordinates of one lane's input vector.
struct SparseInput {
  std::vector<std::pair<ItemIndex, double>> entries;

  static SparseInput one_hot(ItemIndex item) { return {{{item, 1.0}}}; }
};

/// Weighted sum of a session prefix: the event k steps in the past gets
/// weight decay^k (duplicates add up); the result is scaled to unit norm.
inline SparseInput apply_input_discounted(std::span<const ItemIndex> prefix, double decay) {
  if (prefix.empty()) throw std::invalid_argument("apply_input_discounted: empty prefix");
  if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("apply_input_discounted: decay must be in (0, 1]");
  std::map<ItemIndex, double> weight;
  double w = 1.0;
  for (std::size_t k = prefix.size(); k-- > 0;) {
    weight[prefix[k]] += w;
    w *= decay;
  }
  double norm = 0.0;
  for (const auto& [item, v] : weight) norm += v * v;
  norm = std::sqrt(norm);
  SparseInput out;
  for (const auto& [item, v] : weight) out.entries.emplace_back(item, v / norm);
  return out;
}

/// Running form of apply_input_discounted for one lane.
class DiscountedInput {
 public:
  explicit DiscountedInput(double decay = 1.0) : decay_(decay) {}

  void push(ItemIndex item) {
    for (auto& [k, v] : weight_) v *= decay_;
    weight_[item] += 1.0;
  }
  void clear() { weight_.clear(); }

  SparseInput normalized() const {
    double norm = 0.0;
    for (const auto& [item, v] : weight_) norm += v * v;
    norm = std::sqrt(norm);
    SparseInput out;
    for (const auto& [item, v] : weight_) out.entries.emplace_back(item, v / norm);
    return out;
  }

 private:
  double decay_;
  std::map<ItemIndex, double> weight_;
};

struct NetworkConfig {
  std::size_t n_items = 0;
  std::vector<std::size_t> layers{100};
  InputMode input_mode = InputMode::one_hot;
  double input_decay = 0.9;
  bool deep_input = false;
  bool use_bias = false;
  double init_scale = -1.0;  // <= 0: sqrt(6 / (rows + cols)) per matrix
  std::uint64_t seed = 42;

  void validate() const {
    if (n_items == 0) throw std::invalid_argument("network needs at least one item");
    if (layers.empty()) throw std::invalid_argument("network needs at least one GRU layer");
    for (auto h : layers)
      if (h == 0) throw std::invalid_argument("GRU layer size must be positive");
    if (!(input_decay > 0.0 && input_decay <= 1.0)) throw std::invalid_argument("input decay must be in (0, 1]");
  }
};

/// One GRU layer. Input matrices have `dense_in + item_in` rows: first the
/// rows fed by the previous layer's output, then one row per item for the
/// sparse item input.
struct GruLayerParams {
  std::size_t dense_in = 0;
  std::size_t item_in = 0;
  Matrix W_z, W_r, W_h;  // (dense_in + item_in) x hidden
  Matrix U_z, U_r, U_h;  // hidden x hidden
  Matrix b_z, b_r, b_h;  // 1 x hidden, empty when biases are off

  std::size_t hidden() const { return U_z.rows(); }
  bool has_bias() const { return !b_z.empty(); }
};

class NetworkParams {
 public:
  NetworkConfig config;
  std::vector<GruLayerParams> layers;
  Matrix W_out;  // n_items x hidden of the last layer
  Matrix b_out;  // 1 x n_items, empty when biases are off

  static NetworkParams init(const NetworkConfig& cfg) {
    cfg.validate();
    NetworkParams p;
    p.config = cfg;
    Rng rng(cfg.seed);
    std::size_t prev = 0;
    for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
      GruLayerParams layer;
      const std::size_t H = cfg.layers[l];
      layer.dense_in = prev;
      layer.item_in = (l == 0 || cfg.deep_input) ? cfg.n_items : 0;
      const std::size_t in = layer.dense_in + layer.item_in;
      for (Matrix* w : {&layer.W_z, &layer.W_r, &layer.W_h}) *w = uniform_init(in, H, rng, cfg.init_scale);
      for (Matrix* u : {&layer.U_z, &layer.U_r, &layer.U_h}) *u = uniform_init(H, H, rng, cfg.init_scale);
      if (cfg.use_bias)
        for (Matrix* b : {&layer.b_z, &layer.b_r, &layer.b_h}) *b = Matrix(1, H);
      p.layers.push_back(std::move(layer));
      prev = H;
    }
    p.W_out = uniform_init(cfg.n_items, prev, rng, cfg.init_scale);
    if (cfg.use_bias) p.b_out = Matrix(1, cfg.n_items);
    return p;
  }

  std::size_t n_items() const { return W_out.rows(); }
  std::size_t output_hidden() const { return W_out.cols(); }

  /// Every parameter matrix with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Matrix*>> named_params() {
    std::vector<std::pair<std::string, Matrix*>> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& L = layers[l];
      const std::string p = "gru" + std::to_string(l) + ".";
      out.emplace_back(p + "W_z", &L.W_z);
      out.emplace_back(p + "W_r", &L.W_r);
      out.emplace_back(p + "W_h", &L.W_h);
      out.emplace_back(p + "U_z", &L.U_z);
      out.emplace_back(p + "U_r", &L.U_r);
      out.emplace_back(p + "U_h", &L.U_h);
      if (L.has_bias()) {
        out.emplace_back(p + "b_z", &L.b_z);
        out.emplace_back(p + "b_r", &L.b_r);
        out.emplace_back(p + "b_h", &L.b_h);
      }
    }
    out.emplace_back("out.W", &W_out);
    if (!b_out.empty()) out.emplace_back("out.b", &b_out);
    return out;
  }

  std::vector<std::pair<std::string, const Matrix*>> named_params() const {
    std::vector<std::pair<std::string, const Matrix*>> out;
    for (auto& [name, m] : const_cast<NetworkParams*>(this)->named_params()) out.emplace_back(name, m);
    return out;
  }

  void check_finite() const {
    for (const auto& [name, m] : named_params())
      if (!all_finite(m->values())) throw std::runtime_error("parameter " + name + " is not finite");
  }
};

/// Per-layer hidden activations, one row per lane.
struct HiddenState {
  std::vector<Matrix> layers;

  static HiddenState zeros(const NetworkParams& p, std::size_t lanes) {
    HiddenState h;
    for (const auto& L : p.layers) h.layers.emplace_back(lanes, L.hidden());
    return h;
  }

  std::size_t lanes() const { return layers.empty() ? 0 : layers.front().rows(); }

  void reset_lane(std::size_t lane) {
    for (auto& m : layers) std::fill(m.row(lane).begin(), m.row(lane).end(), 0.0);
  }

  /// State aligned to `batch`: continuing lanes gather their previous row,
  /// lanes flagged in reset_mask start from zero in every layer.
  HiddenState carry(const MiniBatch& batch) const {
    HiddenState out;
    for (const auto& m : layers) {
      Matrix next(batch.width(), m.cols());
      for (std::size_t k = 0; k < batch.width(); ++k) {
        const std::size_t src = batch.source_lane.empty() ? k : batch.source_lane[k];
        if (batch.reset_mask[k] || src == kNoLane) continue;
        if (src >= m.rows()) throw std::out_of_range("HiddenState::carry: source lane out of range");
        std::copy_n(m.row(src).begin(), m.cols(), next.row(k).begin());
      }
      out.layers.push_back(std::move(next));
    }
    return out;
  }
};

enum class ScoreActivation { tanh, linear };

/// Activation used for training scores: tanh for the ranking losses,
/// linear logits for cross-entropy.
inline ScoreActivation activation_for(LossKind k) {
  return k == LossKind::xent ? ScoreActivation::linear : ScoreActivation::tanh;
}

struct LayerCache {
  Matrix x_dense;  // lanes x dense_in (empty for the first layer)
  Matrix h_prev, z, r, rh, h_cand, h, mask, out;
};

/// Everything backward needs from one forward step.
struct StepCache {
  std::vector<SparseInput> inputs;
  std::vector<std::size_t> source_lane;  // lanes of the previous cached step
  std::vector<LayerCache> layers;
  std::vector<ItemIndex> columns;
  ScoreActivation activation = ScoreActivation::tanh;
  Matrix pre;     // lanes x columns, before activation
  Matrix scores;  // lanes x columns

  std::size_t lanes() const { return inputs.size(); }

  HiddenState next_state() const {
    HiddenState h;
    for (const auto& L : layers) h.layers.push_back(L.h);
    return h;
  }
};

struct ForwardOptions {
  bool training = false;
  double dropout = 0.0;
  ScoreActivation activation = ScoreActivation::tanh;
};

namespace detail {

// out += v * M[offset .. offset + v.size())
inline void add_vec_mat(std::span<const double> v, const Matrix& M, std::size_t offset, std::span<double> out) {
  for (std::size_t k = 0; k < v.size(); ++k)
    if (v[k] != 0.0) axpy(v[k], M.row(offset + k), out);
}

// out[k] += M[offset + k] . d
inline void add_mat_vec(const Matrix& M, std::size_t offset, std::span<const double> d, std::span<double> out) {
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += dot(M.row(offset + k), d);
}

// G[offset + k] += v[k] * d
inline void add_outer(RowGrad& G, std::size_t offset, std::span<const double> v, std::span<const double> d) {
  for (std::size_t k = 0; k < v.size(); ++k)
    if (v[k] != 0.0) axpy(v[k], d, G.row(offset + k));
}

inline void add_input(const GruLayerParams& L, const Matrix& W, std::span<const double> x_dense,
                      const SparseInput* items, std::span<double> out) {
  if (L.dense_in > 0) add_vec_mat(x_dense, W, 0, out);
  if (L.item_in > 0 && items)
    for (const auto& [item, w] : items->entries) axpy(w, W.row(L.dense_in + item), out);
}

}  // namespace detail

/// One step of the network for `inputs.size()` lanes starting from `h_prev`
/// (already carried and reset). Scores are computed against `columns` only;
/// pass an empty span to skip the output layer.
inline StepCache forward_step(const NetworkParams& p, std::vector<SparseInput> inputs, const HiddenState& h_prev,
                              std::span<const ItemIndex> columns, const ForwardOptions& opt, Rng* rng = nullptr) {
  const std::size_t B = inputs.size();
  if (h_prev.layers.size() != p.layers.size() || h_prev.lanes() != B)
    throw std::invalid_argument("forward_step: hidden state does not match batch of " + std::to_string(B));
  for (const auto& in : inputs)
    for (const auto& [item, w] : in.entries)
      if (item >= p.n_items()) throw std::out_of_range("forward_step: input item " + std::to_string(item));
  for (auto c : columns)
    if (c >= p.n_items()) throw std::out_of_range("forward_step: sampled column " + std::to_string(c) +
                                                  " outside vocabulary of " + std::to_string(p.n_items()));
  if (opt.training && opt.dropout > 0.0 && !rng) throw std::invalid_argument("forward_step: dropout needs an Rng");

  StepCache c;
  c.inputs = std::move(inputs);
  c.columns.assign(columns.begin(), columns.end());
  c.activation = opt.activation;

  const Matrix* below = nullptr;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const GruLayerParams& L = p.layers[l];
    const std::size_t H = L.hidden();
    LayerCache lc;
    if (below) lc.x_dense = *below;
    lc.h_prev = h_prev.layers[l];
    if (lc.h_prev.cols() != H) throw std::invalid_argument("forward_step: hidden width mismatch");
    lc.z = Matrix(B, H);
    lc.r = Matrix(B, H);
    lc.rh = Matrix(B, H);
    lc.h_cand = Matrix(B, H);
    lc.h = Matrix(B, H);
    for (std::size_t s = 0; s < B; ++s) {
      std::span<const double> xd = below ? lc.x_dense.row(s) : std::span<const double>{};
      const SparseInput* items = L.item_in > 0 ? &c.inputs[s] : nullptr;
      auto hp = lc.h_prev.row(s);
      auto z = lc.z.row(s), r = lc.r.row(s), rh = lc.rh.row(s), hc = lc.h_cand.row(s), h = lc.h.row(s);

      detail::add_input(L, L.W_z, xd, items, z);
      detail::add_vec_mat(hp, L.U_z, 0, z);
      detail::add_input(L, L.W_r, xd, items, r);
      detail::add_vec_mat(hp, L.U_r, 0, r);
      if (L.has_bias()) {
        axpy(1.0, L.b_z.row(0), z);
        axpy(1.0, L.b_r.row(0), r);
      }
      for (std::size_t k = 0; k < H; ++k) {
        z[k] = sigmoid(z[k]);
        r[k] = sigmoid(r[k]);
        rh[k] = r[k] * hp[k];
      }
      detail::add_input(L, L.W_h, xd, items, hc);
      detail::add_vec_mat(rh, L.U_h, 0, hc);
      if (L.has_bias()) axpy(1.0, L.b_h.row(0), hc);
      for (std::size_t k = 0; k < H; ++k) {
        hc[k] = tanh_clamped(hc[k]);
        h[k] = (1.0 - z[k]) * hp[k] + z[k] * hc[k];
      }
    }
    if (opt.training && opt.dropout > 0.0 && rng)
      lc.mask = dropout_mask(B, H, opt.dropout, *rng, true);
    else
      lc.mask = Matrix(B, H, 1.0);
    lc.out = lc.h;
    for (std::size_t i = 0; i < lc.out.size(); ++i) lc.out.values()[i] *= lc.mask.values()[i];
    c.layers.push_back(std::move(lc));
    below = &c.layers.back().out;
  }

  if (!columns.empty()) {
    const Matrix& top = c.layers.back().out;
    c.pre = Matrix(B, columns.size());
    c.scores = Matrix(B, columns.size());
    for (std::size_t s = 0; s < B; ++s)
      for (std::size_t j = 0; j < columns.size(); ++j) {
        double v = dot(top.row(s), p.W_out.row(columns[j]));
        if (!p.b_out.empty()) v += p.b_out(0, columns[j]);
        c.pre(s, j) = v;
        c.scores(s, j) = opt.activation == ScoreActivation::tanh ? tanh_clamped(v) : v;
      }
  }
  return c;
}

/// Inputs for a batch in 1-of-N mode.
inline std::vector<SparseInput> one_hot_inputs(const MiniBatch& b) {
  std::vector<SparseInput> in;
  in.reserve(b.width());
  for (auto item : b.inputs) in.push_back(SparseInput::one_hot(item));
  return in;
}

/// Convenience: carries `h` into `batch`, steps with 1-of-N inputs scoring the
/// batch targets, and leaves the new state in `h`.
inline StepCache forward_step(const NetworkParams& p, const MiniBatch& batch, HiddenState& h,
                              const ForwardOptions& opt, Rng* rng = nullptr) {
  HiddenState carried = h.carry(batch);
  StepCache c = forward_step(p, one_hot_inputs(batch), carried, batch.targets, opt, rng);
  c.source_lane = batch.source_lane;
  h = c.next_state();
  return c;
}

/// Gradients aligned with NetworkParams::named_params().
struct ParamGrads {
  std::vector<std::string> names;
  std::vector<RowGrad> grads;

  const RowGrad& operator[](const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return grads[i];
    throw std::out_of_range("no gradient named " + name);
  }
};

/// Backpropagates `dscores` (gradient of the loss w.r.t. the newest step's
/// scores) through the window of cached steps, oldest first. With a single
/// cached step the previous hidden state is treated as constant.
inline ParamGrads backward_step(const NetworkParams& p, std::span<const StepCache* const> window,
                                const Matrix& dscores) {
  if (window.empty() || !window.back()) throw std::invalid_argument("backward_step: no forward cache");
  const StepCache& newest = *window.back();
  if (newest.layers.size() != p.layers.size())
    throw std::invalid_argument("backward_step: forward cache does not match the network");
  if (newest.scores.empty() || dscores.rows() != newest.lanes() || dscores.cols() != newest.columns.size())
    throw std::invalid_argument("backward_step: score gradient " + dscores.shape() + " does not match cache " +
                                newest.scores.shape());

  ParamGrads g;
  auto& np = const_cast<NetworkParams&>(p);
  for (auto& [name, m] : np.named_params()) {
    g.names.push_back(name);
    g.grads.emplace_back(m->rows(), m->cols());
  }
  const std::size_t per_layer = p.layers.empty() || !p.layers.front().has_bias() ? 6 : 9;
  auto grad_of = [&](std::size_t layer, std::size_t which) -> RowGrad& { return g.grads[layer * per_layer + which]; };
  RowGrad& gW_out = g.grads[p.layers.size() * per_layer];
  RowGrad* gb_out = p.b_out.empty() ? nullptr : &g.grads[p.layers.size() * per_layer + 1];

  const std::size_t n_layers = p.layers.size();
  // Gradient arriving at each layer's hidden output h from the following step.
  std::vector<Matrix> dh_next;
  for (std::size_t l = 0; l < n_layers; ++l) dh_next.emplace_back(newest.lanes(), p.layers[l].hidden());

  for (std::size_t t = window.size(); t-- > 0;) {
    const StepCache& c = *window[t];
    const std::size_t B = c.lanes();
    const bool propagate = t > 0;
    std::vector<Matrix> dh_prev;
    if (propagate)
      for (std::size_t l = 0; l < n_layers; ++l) dh_prev.emplace_back(window[t - 1]->lanes(), p.layers[l].hidden());

    // Gradient w.r.t. the top layer's (dropped-out) output.
    Matrix dout(B, p.output_hidden());
    if (t + 1 == window.size()) {
      const Matrix& top = c.layers.back().out;
      for (std::size_t s = 0; s < B; ++s)
        for (std::size_t j = 0; j < c.columns.size(); ++j) {
          double d = dscores(s, j);
          if (d == 0.0) continue;
          if (c.activation == ScoreActivation::tanh) d *= 1.0 - c.scores(s, j) * c.scores(s, j);
          const ItemIndex col = c.columns[j];
          axpy(d, top.row(s), gW_out.row(col));
          if (gb_out) gb_out->row(0)[col] += d;
          axpy(d, p.W_out.row(col), dout.row(s));
        }
    }

    for (std::size_t l = n_layers; l-- > 0;) {
      const GruLayerParams& L = p.layers[l];
      const LayerCache& lc = c.layers[l];
      const std::size_t H = L.hidden();
      Matrix dbelow = l > 0 ? Matrix(B, L.dense_in) : Matrix();
      std::vector<double> dh(H), da_z(H), da_r(H), da_h(H), drh(H);
      for (std::size_t s = 0; s < B; ++s) {
        auto z = lc.z.row(s), r = lc.r.row(s), hc = lc.h_cand.row(s), hp = lc.h_prev.row(s);
        for (std::size_t k = 0; k < H; ++k) dh[k] = dh_next[l](s, k) + dout(s, k) * lc.mask(s, k);
        bool any = false;
        for (std::size_t k = 0; k < H; ++k) {
          da_h[k] = dh[k] * z[k] * (1.0 - hc[k] * hc[k]);
          da_z[k] = dh[k] * (hc[k] - hp[k]) * z[k] * (1.0 - z[k]);
          any = any || dh[k] != 0.0;
        }
        if (!any) continue;
        std::fill(drh.begin(), drh.end(), 0.0);
        detail::add_mat_vec(L.U_h, 0, da_h, drh);
        for (std::size_t k = 0; k < H; ++k) da_r[k] = drh[k] * hp[k] * r[k] * (1.0 - r[k]);

        const std::pair<const Matrix*, std::span<const double>> gates[3] = {
            {&L.W_z, da_z}, {&L.W_r, da_r}, {&L.W_h, da_h}};
        for (std::size_t gi = 0; gi < 3; ++gi) {
          RowGrad& gw = grad_of(l, gi);
          const auto da = gates[gi].second;
          if (L.dense_in > 0) detail::add_outer(gw, 0, lc.x_dense.row(s), da);
          if (L.item_in > 0)
            for (const auto& [item, w] : c.inputs[s].entries) axpy(w, da, gw.row(L.dense_in + item));
          if (l > 0) detail::add_mat_vec(*gates[gi].first, 0, da, dbelow.row(s));
        }
        detail::add_outer(grad_of(l, 3), 0, hp, da_z);
        detail::add_outer(grad_of(l, 4), 0, hp, da_r);
        detail::add_outer(grad_of(l, 5), 0, lc.rh.row(s), da_h);
        if (L.has_bias()) {
          axpy(1.0, da_z, grad_of(l, 6).row(0));
          axpy(1.0, da_r, grad_of(l, 7).row(0));
          axpy(1.0, da_h, grad_of(l, 8).row(0));
        }

        if (propagate && s < c.source_lane.size() && c.source_lane[s] != kNoLane) {
          auto dst = dh_prev[l].row(c.source_lane[s]);
          for (std::size_t k = 0; k < H; ++k) dst[k] += dh[k] * (1.0 - z[k]) + drh[k] * r[k];
          detail::add_mat_vec(L.U_z, 0, da_z, dst);
          detail::add_mat_vec(L.U_r, 0, da_r, dst);
        }
      }
      if (l > 0) {
        // The layer below feeds this one through its dropped-out output.
        dout = std::move(dbelow);
      }
    }
    if (propagate) dh_next = std::move(dh_prev);
  }
  return g;
}

inline ParamGrads backward_step(const NetworkParams& p, const StepCache& cache, const Matrix& dscores) {
  const StepCache* w[1] = {&cache};
  return backward_step(p, std::span<const StepCache* const>(w, 1), dscores);
}

/// Scores of every item for one lane's top-layer hidden vector.
inline std::vector<double> score_all(const NetworkParams& p, std::span<const double> h_last) {
  if (h_last.size() != p.output_hidden()) throw std::invalid_argument("score_all: hidden width mismatch");
  std::vector<double> out(p.n_items());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = dot(h_last, p.W_out.row(i));
    if (!p.b_out.empty()) v += p.b_out(0, i);
    out[i] = tanh_clamped(v);
  }
  return out;
}

}  // namespace sessrnn
