#pragma once

// Baseline recommenders: global popularity, session popularity, item-to-item
// KNN on session co-occurrence, and BPR matrix factorization with
// session-averaged item factors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sessrnn/evaluator.hpp"
#include "sessrnn/matrix.hpp"
#include "sessrnn/session_data.hpp"

namespace sessrnn {

/// Training event count of every item.
inline std::vector<double> pop_score(const ItemVocab& vocab) {
  std::vector<double> s(vocab.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<double>(vocab.popularity(i));
  return s;
}

class PopScorer : public SessionScorer {
 public:
  explicit PopScorer(std::vector<std::uint64_t> popularity) : popularity_(std::move(popularity)) {}
  std::size_t n_items() const override { return popularity_.size(); }
  void reset() override {}
  void observe(ItemIndex) override {}
  void scores(std::vector<double>& out) override {
    out.assign(popularity_.begin(), popularity_.end());
  }

 private:
  std::vector<std::uint64_t> popularity_;
};

/// Ranks items by count within the prefix, then by global popularity.
/// Items absent from the prefix rank below every present item.
inline std::vector<double> spop_score(std::span<const ItemIndex> prefix, const std::vector<std::uint64_t>& popularity) {
  if (prefix.empty()) throw std::invalid_argument("spop_score: empty session prefix");
  if (popularity.empty()) throw std::invalid_argument("spop_score: no items");
  const double base = static_cast<double>(*std::max_element(popularity.begin(), popularity.end())) + 1.0;
  std::vector<double> s(popularity.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<double>(popularity[i]);
  for (auto item : prefix) {
    if (item >= s.size()) throw std::out_of_range("spop_score: unknown item");
    s[item] += base;
  }
  return s;
}

class SPopScorer : public SessionScorer {
 public:
  explicit SPopScorer(std::vector<std::uint64_t> popularity) : popularity_(std::move(popularity)) {}
  std::size_t n_items() const override { return popularity_.size(); }
  void reset() override { prefix_.clear(); }
  void observe(ItemIndex item) override { prefix_.push_back(item); }
  void scores(std::vector<double>& out) override { out = spop_score(prefix_, popularity_); }

 private:
  std::vector<std::uint64_t> popularity_;
  std::vector<ItemIndex> prefix_;
};

struct Neighbor {
  ItemIndex item;
  double similarity;
};

/// For each item, its top-K neighbors by
///   co(a, b) / (sqrt(n_a * n_b) + lambda)
/// where n_a counts sessions containing a and co(a, b) sessions containing
/// both.
class ItemKnnModel {
 public:
  static ItemKnnModel train(const SessionStore& train, std::size_t n_items, double lambda = 20.0,
                            std::size_t max_neighbors = 100) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("itemknn: lambda must be non-negative");
    ItemKnnModel m;
    m.lambda_ = lambda;
    m.max_neighbors_ = max_neighbors;
    m.session_counts_.assign(n_items, 0);
    std::vector<std::unordered_map<ItemIndex, std::uint32_t>> co(n_items);
    std::vector<ItemIndex> uniq;
    for (const auto& s : train.sessions()) {
      uniq.assign(s.items.begin(), s.items.end());
      std::sort(uniq.begin(), uniq.end());
      uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
      for (std::size_t a = 0; a < uniq.size(); ++a) {
        if (uniq[a] >= n_items) throw std::out_of_range("itemknn: item outside vocabulary");
        ++m.session_counts_[uniq[a]];
        for (std::size_t b = a + 1; b < uniq.size(); ++b) {
          ++co[uniq[a]][uniq[b]];
          ++co[uniq[b]][uniq[a]];
        }
      }
    }
    m.neighbors_.resize(n_items);
    for (ItemIndex a = 0; a < n_items; ++a) {
      auto& list = m.neighbors_[a];
      for (const auto& [b, c] : co[a])
        list.push_back({b, similarity(c, m.session_counts_[a], m.session_counts_[b], lambda)});
      std::sort(list.begin(), list.end(), [](const Neighbor& x, const Neighbor& y) {
        if (x.similarity != y.similarity) return x.similarity > y.similarity;
        return x.item < y.item;
      });
      if (list.size() > max_neighbors) list.resize(max_neighbors);
    }
    return m;
  }

  static double similarity(std::uint64_t co, std::uint64_t n_a, std::uint64_t n_b, double lambda) {
    return static_cast<double>(co) / (std::sqrt(static_cast<double>(n_a) * static_cast<double>(n_b)) + lambda);
  }

  static ItemKnnModel from_neighbors(std::vector<std::vector<Neighbor>> neighbors, double lambda,
                                     std::size_t max_neighbors) {
    ItemKnnModel m;
    m.neighbors_ = std::move(neighbors);
    m.lambda_ = lambda;
    m.max_neighbors_ = max_neighbors;
    return m;
  }

  std::size_t n_items() const { return neighbors_.size(); }
  const std::vector<Neighbor>& neighbors(ItemIndex a) const { return neighbors_.at(a); }
  double lambda() const { return lambda_; }
  std::size_t max_neighbors() const { return max_neighbors_; }

  /// Similarity to `b` as stored (0 if b is not among a's neighbors).
  double sim(ItemIndex a, ItemIndex b) const {
    for (const auto& n : neighbors_.at(a))
      if (n.item == b) return n.similarity;
    return 0.0;
  }

  /// Similarity row of the last clicked item.
  std::vector<double> score(ItemIndex current) const {
    if (current >= neighbors_.size())
      throw std::out_of_range("itemknn: item " + std::to_string(current) + " unseen in training");
    std::vector<double> s(neighbors_.size(), 0.0);
    for (const auto& n : neighbors_[current]) s[n.item] = n.similarity;
    return s;
  }

 private:
  std::vector<std::vector<Neighbor>> neighbors_;
  std::vector<std::uint64_t> session_counts_;
  double lambda_ = 20.0;
  std::size_t max_neighbors_ = 100;
};

class ItemKnnScorer : public SessionScorer {
 public:
  explicit ItemKnnScorer(const ItemKnnModel& model) : model_(&model) {}
  std::size_t n_items() const override { return model_->n_items(); }
  void reset() override { last_.reset(); }
  void observe(ItemIndex item) override { last_ = item; }
  void scores(std::vector<double>& out) override {
    if (!last_) throw std::logic_error("ItemKnnScorer: no event observed");
    out = model_->score(*last_);
  }

 private:
  const ItemKnnModel* model_;
  std::optional<ItemIndex> last_;
};

struct BprMfConfig {
  std::size_t factors = 100;
  std::size_t epochs = 10;
  double learning_rate = 0.05;
  double regularization = 1e-5;
  double init_scale = 0.1;
  std::uint64_t seed = 42;
};

/// Item factors only; a session is represented by the mean factor of its
/// items.
class BprMfModel {
 public:
  BprMfModel() = default;
  explicit BprMfModel(Matrix factors) : factors_(std::move(factors)) {}

  /// SGD on (session, positive, uniform negative) triples. The positive is a
  /// random event of a random-event-weighted session; the session vector is
  /// the mean of the session's other events.
  static BprMfModel train(const SessionStore& train, std::size_t n_items, const BprMfConfig& cfg) {
    if (cfg.factors < 1) throw std::invalid_argument("bprmf: latent dimension must be at least 1");
    if (n_items < 2) throw std::invalid_argument("bprmf: needs at least two items");
    Rng rng(cfg.seed);
    BprMfModel m(uniform_init(n_items, cfg.factors, rng, cfg.init_scale));
    Matrix& F = m.factors_;
    const std::size_t d = cfg.factors;

    std::vector<std::pair<std::size_t, std::size_t>> events;
    for (std::size_t s = 0; s < train.size(); ++s)
      for (std::size_t k = 0; k < train[s].length(); ++k) events.emplace_back(s, k);
    if (events.empty()) return m;

    std::vector<double> u(d), diff(d);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (std::size_t n = 0; n < events.size(); ++n) {
        const auto [si, pos] = events[rng.index(events.size())];
        const Session& s = train[si];
        const ItemIndex i = s.items[pos];
        ItemIndex j = rng.index(n_items);
        for (int attempt = 0; attempt < 10 && std::find(s.items.begin(), s.items.end(), j) != s.items.end(); ++attempt)
          j = rng.index(n_items);
        if (j == i) continue;

        std::fill(u.begin(), u.end(), 0.0);
        const double inv_m = 1.0 / static_cast<double>(s.length() - 1);
        for (std::size_t k = 0; k < s.length(); ++k)
          if (k != pos) axpy(inv_m, F.row(s.items[k]), u);
        for (std::size_t f = 0; f < d; ++f) diff[f] = F(i, f) - F(j, f);
        const double x = dot(u, diff);
        const double g = sigmoid(-x);
        const double lr = cfg.learning_rate, reg = cfg.regularization;
        for (std::size_t f = 0; f < d; ++f) {
          F(i, f) += lr * (g * u[f] - reg * F(i, f));
          F(j, f) += lr * (-g * u[f] - reg * F(j, f));
        }
        for (std::size_t k = 0; k < s.length(); ++k) {
          if (k == pos) continue;
          auto c = F.row(s.items[k]);
          for (std::size_t f = 0; f < d; ++f) c[f] += lr * (g * diff[f] * inv_m - reg * c[f]);
        }
      }
    }
    return m;
  }

  const Matrix& factors() const { return factors_; }
  std::size_t n_items() const { return factors_.rows(); }

  /// score(j) = mean(factors of prefix) . factor(j)
  std::vector<double> score_session(std::span<const ItemIndex> prefix) const {
    if (prefix.empty()) throw std::invalid_argument("bprmf: empty session prefix");
    std::vector<double> u(factors_.cols(), 0.0);
    for (auto item : prefix) {
      if (item >= factors_.rows()) throw std::out_of_range("bprmf: unknown item");
      axpy(1.0 / static_cast<double>(prefix.size()), factors_.row(item), u);
    }
    std::vector<double> s(factors_.rows());
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = dot(u, factors_.row(j));
    return s;
  }

 private:
  Matrix factors_;
};

class BprMfScorer : public SessionScorer {
 public:
  explicit BprMfScorer(const BprMfModel& model) : model_(&model) {}
  std::size_t n_items() const override { return model_->n_items(); }
  void reset() override { prefix_.clear(); }
  void observe(ItemIndex item) override { prefix_.push_back(item); }
  void scores(std::vector<double>& out) override { out = model_->score_session(prefix_); }

 private:
  const BprMfModel* model_;
  std::vector<ItemIndex> prefix_;
};

}  // namespace sessrnn
