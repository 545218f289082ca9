#pragma once

// Ranking losses over a mini-batch score matrix whose diagonal holds each
// lane's positive item and whose off-diagonal entries are the in-batch
// negatives.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sessrnn/matrix.hpp"
#include "sessrnn/session_data.hpp"

namespace sessrnn {

enum class LossKind { top1, bpr, xent };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::top1: return "top1";
    case LossKind::bpr: return "bpr";
    case LossKind::xent: return "xent";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "top1") return LossKind::top1;
  if (s == "bpr") return LossKind::bpr;
  if (s == "xent" || s == "cross-entropy") return LossKind::xent;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "' (expected top1, bpr or xent)");
}

/// Scores of B lanes against C >= B candidate columns. Entry (s, s) is lane
/// s's positive; the other columns of row s are its negatives unless masked.
struct ScoreBatch {
  Matrix scores;
  // Row-major B x C; nonzero where (s, j) is a usable negative. Empty means
  // every off-diagonal entry is usable.
  std::vector<char> negative_mask;

  std::size_t lanes() const { return scores.rows(); }
  std::size_t columns() const { return scores.cols(); }

  bool is_negative(std::size_t s, std::size_t j) const {
    if (j == s) return false;
    return negative_mask.empty() || negative_mask[s * scores.cols() + j] != 0;
  }
};

/// Masks out negatives that are the lane's own target item (duplicate
/// targets within a batch, or an extra sample hitting the positive).
inline std::vector<char> collision_mask(std::span<const ItemIndex> targets,
                                        std::span<const ItemIndex> columns) {
  std::vector<char> mask(targets.size() * columns.size(), 1);
  for (std::size_t s = 0; s < targets.size(); ++s)
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (j == s || columns[j] == targets[s]) mask[s * columns.size() + j] = 0;
  return mask;
}

struct LossResult {
  double value = 0.0;
  Matrix grad;  // d value / d scores
};

namespace detail {

inline void check_batch(const ScoreBatch& sb, const char* name) {
  if (sb.lanes() < 1 || sb.columns() < 2)
    throw std::invalid_argument(std::string(name) + ": needs at least one negative column, got scores " +
                                sb.scores.shape());
  if (sb.columns() < sb.lanes())
    throw std::invalid_argument(std::string(name) + ": fewer columns than lanes");
  if (!sb.negative_mask.empty() && sb.negative_mask.size() != sb.scores.size())
    throw std::invalid_argument(std::string(name) + ": mask size does not match scores");
}

inline std::size_t count_negatives(const ScoreBatch& sb, std::size_t s) {
  std::size_t n = 0;
  for (std::size_t j = 0; j < sb.columns(); ++j) n += sb.is_negative(s, j) ? 1 : 0;
  return n;
}

}  // namespace detail

/// BPR: per row -(1/N) sum_j log sigmoid(r_pos - r_j), averaged over rows.
inline LossResult bpr_loss(const ScoreBatch& sb) {
  detail::check_batch(sb, "bpr_loss");
  const std::size_t B = sb.lanes(), C = sb.columns();
  LossResult out{0.0, Matrix(B, C)};
  for (std::size_t s = 0; s < B; ++s) {
    const std::size_t n = detail::count_negatives(sb, s);
    if (n == 0) continue;
    const double w = 1.0 / (static_cast<double>(n) * static_cast<double>(B));
    const double pos = sb.scores(s, s);
    for (std::size_t j = 0; j < C; ++j) {
      if (!sb.is_negative(s, j)) continue;
      const double diff = pos - sb.scores(s, j);
      out.value -= w * log_sigmoid(diff);
      const double g = w * sigmoid(-diff);  // d(-log sigmoid(d))/dd = -sigmoid(-d)
      out.grad(s, s) -= g;
      out.grad(s, j) += g;
    }
  }
  return out;
}

/// TOP1: per row (1/N) sum_j [sigmoid(r_j - r_pos) + sigmoid(r_j^2)],
/// averaged over rows.
inline LossResult top1_loss(const ScoreBatch& sb) {
  detail::check_batch(sb, "top1_loss");
  const std::size_t B = sb.lanes(), C = sb.columns();
  LossResult out{0.0, Matrix(B, C)};
  for (std::size_t s = 0; s < B; ++s) {
    const std::size_t n = detail::count_negatives(sb, s);
    if (n == 0) continue;
    const double w = 1.0 / (static_cast<double>(n) * static_cast<double>(B));
    const double pos = sb.scores(s, s);
    for (std::size_t j = 0; j < C; ++j) {
      if (!sb.is_negative(s, j)) continue;
      const double neg = sb.scores(s, j);
      const double rank = sigmoid(neg - pos);
      const double reg = sigmoid(neg * neg);
      out.value += w * (rank + reg);
      const double drank = w * rank * (1.0 - rank);
      out.grad(s, j) += drank + w * reg * (1.0 - reg) * 2.0 * neg;
      out.grad(s, s) -= drank;
    }
  }
  return out;
}

/// Softmax cross-entropy of the positive against the row's usable
/// negatives, averaged over rows. Max-subtracted for stability.
inline LossResult xent_loss(const ScoreBatch& sb) {
  detail::check_batch(sb, "xent_loss");
  const std::size_t B = sb.lanes(), C = sb.columns();
  LossResult out{0.0, Matrix(B, C)};
  const double w = 1.0 / static_cast<double>(B);
  for (std::size_t s = 0; s < B; ++s) {
    double mx = sb.scores(s, s);
    for (std::size_t j = 0; j < C; ++j)
      if (sb.is_negative(s, j)) mx = std::max(mx, sb.scores(s, j));
    double z = 0.0;
    for (std::size_t j = 0; j < C; ++j)
      if (j == s || sb.is_negative(s, j)) z += std::exp(sb.scores(s, j) - mx);
    const double log_z = mx + std::log(z);
    out.value += w * (log_z - sb.scores(s, s));
    for (std::size_t j = 0; j < C; ++j) {
      if (j != s && !sb.is_negative(s, j)) continue;
      const double p = std::exp(sb.scores(s, j) - log_z);
      out.grad(s, j) = w * (p - (j == s ? 1.0 : 0.0));
    }
  }
  return out;
}

inline LossResult compute_loss(LossKind kind, const ScoreBatch& sb) {
  switch (kind) {
    case LossKind::top1: return top1_loss(sb);
    case LossKind::bpr: return bpr_loss(sb);
    case LossKind::xent: return xent_loss(sb);
  }
  throw std::invalid_argument("compute_loss: bad loss kind");
}

/// Fraction of usable negatives scoring strictly above the positive, per
/// row. Rows without negatives report 0.
inline std::vector<double> relative_rank(const ScoreBatch& sb) {
  detail::check_batch(sb, "relative_rank");
  std::vector<double> out(sb.lanes(), 0.0);
  for (std::size_t s = 0; s < sb.lanes(); ++s) {
    std::size_t n = 0, above = 0;
    for (std::size_t j = 0; j < sb.columns(); ++j) {
      if (!sb.is_negative(s, j)) continue;
      ++n;
      above += sb.scores(s, j) > sb.scores(s, s) ? 1 : 0;
    }
    out[s] = n == 0 ? 0.0 : static_cast<double>(above) / static_cast<double>(n);
  }
  return out;
}

}  // namespace sessrnn
