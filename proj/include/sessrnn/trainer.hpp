#pragma once

// Training loop for the GRU network over session-parallel mini-batches,
// and the session scorer used to evaluate or serve a trained network.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sessrnn/evaluator.hpp"
#include "sessrnn/gru_net.hpp"
#include "sessrnn/optimizer.hpp"
#include "sessrnn/ranking_loss.hpp"
#include "sessrnn/session_data.hpp"

namespace sessrnn {

/// Defaults are the best RSC15 / TOP1 configuration.
struct TrainConfig {
  std::size_t batch_width = 50;
  double dropout = 0.5;
  double learning_rate = 0.01;
  double momentum = 0.0;
  LossKind loss = LossKind::top1;
  OptimizerKind optimizer = OptimizerKind::adagrad;
  std::size_t epochs = 10;
  std::uint64_t seed = 42;
  std::size_t bptt_horizon = 1;
  // Popularity-proportional samples appended to the in-batch negatives.
  std::size_t extra_negatives = 0;
  double rmsprop_decay = 0.9;
  double epsilon = 1e-6;

  OptimizerConfig optimizer_config() const {
    return {optimizer, learning_rate, momentum, epsilon, rmsprop_decay};
  }

  void validate() const {
    if (batch_width < 1) throw std::invalid_argument("batch width must be at least 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
    if (bptt_horizon < 1) throw std::invalid_argument("BPTT horizon must be at least 1");
    optimizer_config().validate();
  }
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, std::size_t step, double loss)
      : std::runtime_error("non-finite loss (" + std::to_string(loss) + ") at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step)),
        epoch_(epoch),
        step_(step) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t batches = 0;  // batches that produced an update
  std::size_t pairs = 0;
};

class GruTrainer {
 public:
  GruTrainer(NetworkParams& params, TrainConfig cfg, std::vector<std::uint64_t> popularity = {})
      : params_(&params),
        cfg_(cfg),
        optimizer_((cfg.validate(), cfg.optimizer_config())),
        rng_(cfg.seed ^ 0x9E3779B97F4A7C15ULL) {
    if (cfg_.extra_negatives > 0) {
      if (popularity.size() != params.n_items())
        throw std::invalid_argument("extra negatives need popularity counts for every item");
      cumulative_.resize(popularity.size());
      double acc = 0.0;
      for (std::size_t i = 0; i < popularity.size(); ++i) cumulative_[i] = acc += static_cast<double>(popularity[i]);
      if (acc <= 0.0) throw std::invalid_argument("popularity counts are all zero");
    }
  }

  EpochStats run_epoch(const SessionStore& train) {
    EpochStats st;
    st.epoch = epoch_;
    SessionParallelIterator it(train, cfg_.batch_width);
    HiddenState h = HiddenState::zeros(*params_, 0);
    std::vector<DiscountedInput> lane_inputs;
    std::deque<StepCache> window;
    const bool discounted = params_->config.input_mode == InputMode::discounted;
    double loss_sum = 0.0;
    std::size_t step = 0;

    while (auto batch = it.next()) {
      ++step;
      const std::size_t B = batch->width();
      st.pairs += B;
      HiddenState carried = h.carry(*batch);

      std::vector<SparseInput> inputs;
      if (discounted) {
        std::vector<DiscountedInput> next;
        for (std::size_t k = 0; k < B; ++k) {
          const std::size_t src = batch->source_lane[k];
          next.push_back(src == kNoLane ? DiscountedInput(params_->config.input_decay) : lane_inputs[src]);
          next.back().push(batch->inputs[k]);
          inputs.push_back(next.back().normalized());
        }
        lane_inputs = std::move(next);
      } else {
        inputs = one_hot_inputs(*batch);
      }

      std::vector<ItemIndex> columns = batch->targets;
      for (std::size_t e = 0; e < cfg_.extra_negatives; ++e) columns.push_back(sample_popular());

      const ForwardOptions fo{true, cfg_.dropout, activation_for(cfg_.loss)};
      StepCache cache = forward_step(*params_, std::move(inputs), carried, columns, fo, &rng_);
      cache.source_lane = batch->source_lane;
      h = cache.next_state();
      window.push_back(std::move(cache));
      while (window.size() > cfg_.bptt_horizon) window.pop_front();

      if (columns.size() < 2) continue;  // a lone lane has no negatives
      const StepCache& cur = window.back();
      ScoreBatch sb{cur.scores, collision_mask(batch->targets, columns)};
      LossResult loss = compute_loss(cfg_.loss, sb);
      if (!std::isfinite(loss.value)) throw DivergenceError(epoch_, step, loss.value);
      loss_sum += loss.value;
      ++st.batches;

      std::vector<const StepCache*> ptrs;
      for (const auto& c : window) ptrs.push_back(&c);
      ParamGrads grads = backward_step(*params_, ptrs, loss.grad);
      auto named = params_->named_params();
      for (std::size_t i = 0; i < named.size(); ++i) optimizer_.step(named[i].first, *named[i].second, grads.grads[i]);
    }
    st.mean_loss = st.batches == 0 ? 0.0 : loss_sum / static_cast<double>(st.batches);
    ++epoch_;
    return st;
  }

  const TrainConfig& config() const { return cfg_; }

 private:
  ItemIndex sample_popular() {
    const double u = rng_.uniform01() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return static_cast<ItemIndex>(std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                                           static_cast<std::ptrdiff_t>(cumulative_.size()) - 1));
  }

  NetworkParams* params_;
  TrainConfig cfg_;
  Optimizer optimizer_;
  Rng rng_;
  std::vector<double> cumulative_;
  std::size_t epoch_ = 0;
};

/// Initializes a network for `vocab` (seeded from `train.seed`) and trains it.
inline NetworkParams train_gru(const SessionStore& sessions, const ItemVocab& vocab, NetworkConfig net,
                               const TrainConfig& train, const std::function<void(const EpochStats&)>& on_epoch = {}) {
  net.n_items = vocab.size();
  net.seed = train.seed;
  NetworkParams params = NetworkParams::init(net);
  GruTrainer trainer(params, train, vocab.popularity());
  for (std::size_t e = 0; e < train.epochs; ++e) {
    EpochStats st = trainer.run_epoch(sessions);
    if (on_epoch) on_epoch(st);
  }
  return params;
}

/// Inference over one session at a time with a single-lane hidden state.
class GruScorer : public SessionScorer {
 public:
  explicit GruScorer(const NetworkParams& params)
      : params_(&params), h_(HiddenState::zeros(params, 1)), input_(params.config.input_decay) {}

  std::size_t n_items() const override { return params_->n_items(); }

  void reset() override {
    h_ = HiddenState::zeros(*params_, 1);
    input_.clear();
  }

  void observe(ItemIndex item) override {
    if (item >= params_->n_items()) throw std::out_of_range("GruScorer: unknown item " + std::to_string(item));
    std::vector<SparseInput> in;
    if (params_->config.input_mode == InputMode::discounted) {
      input_.push(item);
      in.push_back(input_.normalized());
    } else {
      in.push_back(SparseInput::one_hot(item));
    }
    StepCache c = forward_step(*params_, std::move(in), h_, {}, ForwardOptions{});
    h_ = c.next_state();
  }

  void scores(std::vector<double>& out) override { out = score_all(*params_, h_.layers.back().row(0)); }

  const HiddenState& state() const { return h_; }

 private:
  const NetworkParams* params_;
  HiddenState h_;
  DiscountedInput input_;
};

}  // namespace sessrnn
