#pragma once

// Next-item evaluation: feed each test session event by event, rank the
// true next item, and accumulate Recall@K and MRR@K.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sessrnn/session_data.hpp"

namespace sessrnn {

/// Session-stateful recommender: observe() the session's events in order,
/// scores() after each to rank candidates for the next one.
class SessionScorer {
 public:
  virtual ~SessionScorer() = default;
  virtual std::size_t n_items() const = 0;
  virtual void reset() = 0;
  virtual void observe(ItemIndex item) = 0;
  /// Fills `out` with one score per item; higher ranks first.
  virtual void scores(std::vector<double>& out) = 0;
};

/// 1-based rank of `target`. Items tied with the target rank ahead of it.
inline std::size_t rank_of(std::span<const double> scores, ItemIndex target) {
  if (target >= scores.size()) throw std::out_of_range("rank_of: target outside score vector");
  const double t = scores[target];
  std::size_t ahead = 0;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (j != target && scores[j] >= t) ++ahead;
  return ahead + 1;
}

/// Same tie rule, restricted to `candidates` (the target always competes).
inline std::size_t rank_among(std::span<const double> scores, ItemIndex target,
                              std::span<const ItemIndex> candidates) {
  if (target >= scores.size()) throw std::out_of_range("rank_among: target outside score vector");
  const double t = scores[target];
  std::size_t ahead = 0;
  for (auto j : candidates)
    if (j != target && scores[j] >= t) ++ahead;
  return ahead + 1;
}

/// The `n` most popular items, ties by index.
inline std::vector<ItemIndex> most_popular(const std::vector<std::uint64_t>& popularity, std::size_t n) {
  std::vector<ItemIndex> idx(popularity.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  n = std::min(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                    [&](ItemIndex a, ItemIndex b) {
                      if (popularity[a] != popularity[b]) return popularity[a] > popularity[b];
                      return a < b;
                    });
  idx.resize(n);
  return idx;
}

struct PositionStats {
  std::size_t cases = 0;
  std::size_t hits = 0;
  double reciprocal_rank_sum = 0.0;
};

struct EvalReport {
  double recall_at_k = 0.0;
  double mrr_at_k = 0.0;
  std::size_t cutoff = 20;
  std::size_t n_cases = 0;
  // by_position[p] covers predictions made after the (p+1)-th event.
  std::vector<PositionStats> by_position;

  bool defined() const { return n_cases > 0; }

  double recall_at_position(std::size_t p) const {
    const auto& s = by_position.at(p);
    return s.cases == 0 ? 0.0 : static_cast<double>(s.hits) / static_cast<double>(s.cases);
  }

  /// Single-line key=value record.
  std::string to_line() const {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    os << "cutoff=" << cutoff << " n_cases=" << n_cases;
    if (defined())
      os << " recall@" << cutoff << "=" << recall_at_k << " mrr@" << cutoff << "=" << mrr_at_k;
    else
      os << " recall@" << cutoff << "=undefined mrr@" << cutoff << "=undefined";
    return os.str();
  }
};

/// Tabular results, one row per method.
inline void write_report_table(std::ostream& os, const std::vector<std::pair<std::string, EvalReport>>& rows) {
  if (rows.empty()) return;
  const std::size_t k = rows.front().second.cutoff;
  std::size_t width = 8;
  for (const auto& [name, r] : rows) width = std::max(width, name.size());
  os << std::left << std::setw(static_cast<int>(width)) << "Method" << "  " << std::setw(10)
     << ("Recall@" + std::to_string(k)) << "  " << std::setw(10) << ("MRR@" + std::to_string(k)) << "  Cases\n";
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << name << "  ";
    if (r.defined())
      os << std::fixed << std::setprecision(4) << std::setw(10) << r.recall_at_k << "  " << std::setw(10)
         << r.mrr_at_k;
    else
      os << std::setw(10) << "n/a" << "  " << std::setw(10) << "n/a";
    os << "  " << r.n_cases << "\n";
  }
}

struct EvalOptions {
  std::size_t cutoff = 20;
  // Rank only against the N most popular training items (plus the target).
  std::optional<std::size_t> prefilter_n;
};

inline EvalReport evaluate(SessionScorer& scorer, const SessionStore& test, const EvalOptions& opt = {},
                           const std::vector<std::uint64_t>* popularity = nullptr) {
  if (opt.cutoff < 1) throw std::invalid_argument("evaluate: cutoff must be at least 1");
  std::vector<ItemIndex> candidates;
  if (opt.prefilter_n) {
    if (!popularity) throw std::invalid_argument("evaluate: prefilter needs item popularity");
    candidates = most_popular(*popularity, *opt.prefilter_n);
  }

  EvalReport rep;
  rep.cutoff = opt.cutoff;
  std::vector<double> scores;
  std::size_t hits = 0;
  double rr = 0.0;
  for (const auto& s : test.sessions()) {
    scorer.reset();
    for (std::size_t k = 0; k + 1 < s.length(); ++k) {
      scorer.observe(s.items[k]);
      scorer.scores(scores);
      const ItemIndex target = s.items[k + 1];
      const std::size_t rank = opt.prefilter_n ? rank_among(scores, target, candidates) : rank_of(scores, target);
      if (rep.by_position.size() <= k) rep.by_position.resize(k + 1);
      auto& pos = rep.by_position[k];
      ++pos.cases;
      ++rep.n_cases;
      if (rank <= opt.cutoff) {
        ++hits;
        ++pos.hits;
        rr += 1.0 / static_cast<double>(rank);
        pos.reciprocal_rank_sum += 1.0 / static_cast<double>(rank);
      }
    }
  }
  if (rep.n_cases > 0) {
    rep.recall_at_k = static_cast<double>(hits) / static_cast<double>(rep.n_cases);
    rep.mrr_at_k = rr / static_cast<double>(rep.n_cases);
  }
  return rep;
}

}  // namespace sessrnn
