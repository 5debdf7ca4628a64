// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "i2c2w/autograd.hpp"
#include "i2c2w/charset.hpp"

namespace i2c2w {

// ---------------------------------------------------------------------------
// bipartite matching
// ---------------------------------------------------------------------------

struct MatchAssignment {
  // gt_to_pred[i] = prediction index matched to ground-truth slot i
  std::vector<int> gt_to_pred;
  double total_cost = 0.0;
};

namespace match_detail {

// Potentials-based shortest-augmenting-path assignment, O(n^3). Returns the
// minimizing row->col map together with the dual variables.
struct DualSolution {
  std::vector<int> row_to_col;
  std::vector<double> u, v;
};

inline DualSolution solve_assignment(const MatX<double>& a) {
  const int n = static_cast<int>(a.rows());
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  DualSolution sol;
  sol.row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) sol.row_to_col[p[j] - 1] = j - 1;
  sol.u.assign(u.begin() + 1, u.end());
  sol.v.assign(v.begin() + 1, v.end());
  return sol;
}

// Kuhn's augmenting-path matching restricted to an adjacency list; used to
// test whether a partial lexicographic choice still completes.
class TightMatcher {
 public:
  explicit TightMatcher(const std::vector<std::vector<int>>& adj)
      : adj_(adj), n_(static_cast<int>(adj.size())), col_owner_(n_, -1),
        visited_(n_, 0), stamp_(0) {}

  // Can rows [first_row, n) be perfectly matched into columns not in `banned`?
  bool feasible(int first_row, const std::vector<char>& banned) {
    std::fill(col_owner_.begin(), col_owner_.end(), -1);
    for (int r = first_row; r < n_; ++r) {
      ++stamp_;
      if (!augment(r, banned)) return false;
    }
    return true;
  }

 private:
  bool augment(int row, const std::vector<char>& banned) {
    for (int col : adj_[row]) {
      if (banned[col] || visited_[col] == stamp_) continue;
      visited_[col] = stamp_;
      if (col_owner_[col] < 0 || augment(col_owner_[col], banned)) {
        col_owner_[col] = row;
        return true;
      }
    }
    return false;
  }

  const std::vector<std::vector<int>>& adj_;
  int n_;
  std::vector<int> col_owner_;
  std::vector<int> visited_;
  int stamp_;
};

}  // namespace match_detail

// Globally minimal-cost perfect matching with a deterministic tie-break:
// among all minimum-cost assignments, the lexicographically smallest
// gt_to_pred vector is returned.
inline MatchAssignment hungarian_assign(const MatX<double>& cost) {
  if (cost.rows() != cost.cols() || cost.rows() == 0)
    throw ShapeMismatch("hungarian_assign expects a square cost matrix");
  if (!cost.allFinite()) throw NonFinite("cost matrix contains NaN/Inf");
  const int n = static_cast<int>(cost.rows());

  const auto sol = match_detail::solve_assignment(cost);

  // Complementary slackness: every optimal assignment lives on tight edges.
  const double eps =
      1e-9 * (1.0 + cost.cwiseAbs().maxCoeff());
  std::vector<std::vector<int>> tight(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (cost(i, j) - sol.u[i] - sol.v[j] <= eps) tight[i].push_back(j);

  // Fix rows in order, always taking the smallest column that still allows a
  // perfect completion within the tight graph.
  match_detail::TightMatcher matcher(tight);
  std::vector<char> banned(n, 0);
  MatchAssignment result;
  result.gt_to_pred.assign(n, -1);
  for (int i = 0; i < n; ++i) {
    bool fixed = false;
    for (int j : tight[i]) {
      if (banned[j]) continue;
      banned[j] = 1;
      if (matcher.feasible(i + 1, banned)) {
        result.gt_to_pred[i] = j;
        fixed = true;
        break;
      }
      banned[j] = 0;
    }
    if (!fixed) {
      // numerically impossible given a valid dual solution; fall back to the
      // solver's own assignment from this row on
      for (int r = i; r < n; ++r) {
        if (result.gt_to_pred[r] >= 0) continue;
        result.gt_to_pred[r] = sol.row_to_col[r];
      }
      break;
    }
  }
  for (int i = 0; i < n; ++i)
    result.total_cost += cost(i, result.gt_to_pred[i]);
  return result;
}

// Matching cost between ground-truth slot i and prediction j:
// -P_j(char_i) - beta * P_j(pos_i). Probabilities enter detached; gradients
// never flow through the assignment.
template <typename S>
MatX<double> match_cost_matrix(const MatX<S>& char_probs,
                               const MatX<S>& pos_probs,
                               const LabelSet& labels, double beta) {
  const int n = static_cast<int>(char_probs.rows());
  if (pos_probs.rows() != n)
    throw ShapeMismatch("probability row counts differ");
  if (static_cast<int>(labels.char_classes.size()) != n)
    throw ShapeMismatch("label slot count differs from prediction count");
  for (int j = 0; j < n; ++j) {
    if (std::abs(static_cast<double>(char_probs.row(j).sum()) - 1.0) > 1e-3 ||
        std::abs(static_cast<double>(pos_probs.row(j).sum()) - 1.0) > 1e-3)
      throw ShapeMismatch("probability rows must sum to 1");
  }
  MatX<double> cost(n, n);
  for (int i = 0; i < n; ++i) {
    const int c = labels.char_classes[i];
    const int l = labels.pos_classes[i];
    for (int j = 0; j < n; ++j)
      cost(i, j) = -static_cast<double>(char_probs(j, c)) -
                   beta * static_cast<double>(pos_probs(j, l));
  }
  return cost;
}

// ---------------------------------------------------------------------------
// detection loss
// ---------------------------------------------------------------------------

// Weighted-mean cross-entropy over matched (prediction row, target class)
// pairs; the weights realize the null-class down-weighting.
template <typename S>
Var<S> matched_cross_entropy(Tape<S>& tape, const Var<S>& logits,
                             const std::vector<int>& pred_rows,
                             const std::vector<int>& targets,
                             const std::vector<double>& weights) {
  const std::size_t count = pred_rows.size();
  if (targets.size() != count || weights.size() != count)
    throw ShapeMismatch("matched_cross_entropy argument sizes differ");
  double weight_sum = 0.0;
  for (double w : weights) weight_sum += w;

  auto log_probs = std::make_shared<MatX<double>>(logits->value.rows(),
                                                  logits->value.cols());
  for (Eigen::Index r = 0; r < logits->value.rows(); ++r) {
    const double m = static_cast<double>(logits->value.row(r).maxCoeff());
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits->value.cols(); ++c)
      z += std::exp(static_cast<double>(logits->value(r, c)) - m);
    const double log_z = m + std::log(z);
    for (Eigen::Index c = 0; c < logits->value.cols(); ++c)
      (*log_probs)(r, c) = static_cast<double>(logits->value(r, c)) - log_z;
  }

  double loss = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    loss -= weights[i] * (*log_probs)(pred_rows[i], targets[i]);
  loss /= weight_sum;

  auto pr = std::make_shared<std::vector<int>>(pred_rows);
  auto tg = std::make_shared<std::vector<int>>(targets);
  auto wt = std::make_shared<std::vector<double>>(weights);
  return tape.track(
      MatX<S>(MatX<S>::Constant(1, 1, static_cast<S>(loss))), {logits},
      [logits, log_probs, pr, tg, wt, weight_sum](Node<S>& n) {
        if (!logits->requires_grad) return;
        const double upstream = static_cast<double>(n.grad(0, 0));
        MatX<double> g = MatX<double>::Zero(logits->value.rows(),
                                            logits->value.cols());
        for (std::size_t i = 0; i < pr->size(); ++i) {
          const int row = (*pr)[i];
          const double scale = (*wt)[i] / weight_sum * upstream;
          for (Eigen::Index c = 0; c < g.cols(); ++c)
            g(row, c) += scale * std::exp((*log_probs)(row, c));
          g(row, (*tg)[i]) -= scale;
        }
        logits->accumulate(g.template cast<S>());
      });
}

// Character and position cross-entropies over the matched pairs; slots whose
// ground truth is the null class contribute with `null_weight`.
template <typename S>
std::pair<Var<S>, Var<S>> detection_loss(Tape<S>& tape,
                                         const Var<S>& char_logits,
                                         const Var<S>& pos_logits,
                                         const LabelSet& labels,
                                         const std::vector<int>& gt_to_pred,
                                         double null_weight = 0.1) {
  const int n = static_cast<int>(gt_to_pred.size());
  if (static_cast<int>(labels.char_classes.size()) != n)
    throw ShapeMismatch("assignment and labels disagree on slot count");
  const CharSet cs;
  const int null_pos = static_cast<int>(pos_logits->value.cols()) - 1;
  std::vector<double> char_weights(n), pos_weights(n);
  for (int i = 0; i < n; ++i) {
    char_weights[i] = labels.char_classes[i] == cs.null_index() ? null_weight : 1.0;
    pos_weights[i] = labels.pos_classes[i] == null_pos ? null_weight : 1.0;
  }
  auto det_char = matched_cross_entropy(tape, char_logits, gt_to_pred,
                                        labels.char_classes, char_weights);
  auto det_pos = matched_cross_entropy(tape, pos_logits, gt_to_pred,
                                       labels.pos_classes, pos_weights);
  return {det_char, det_pos};
}

// ---------------------------------------------------------------------------
// CTC loss
// ---------------------------------------------------------------------------

namespace ctc_detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

}  // namespace ctc_detail

// Number of slots the target minimally needs: its length plus one separator
// blank per adjacent repeat.
inline int ctc_min_slots(const std::vector<int>& target) {
  int repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++repeats;
  return static_cast<int>(target.size()) + repeats;
}

// Negative log-likelihood of the target under the path-sum distribution
// defined by per-slot softmaxes of `slot_logits`; the collapse map merges
// adjacent repeats and removes blanks. Gradient flows into the logits.
template <typename S>
Var<S> ctc_loss(Tape<S>& tape, const Var<S>& slot_logits,
                const std::vector<int>& target, int blank) {
  const int T = static_cast<int>(slot_logits->value.rows());
  const int K = static_cast<int>(slot_logits->value.cols());
  for (int c : target)
    if (c < 0 || c >= K || c == blank)
      throw ShapeMismatch("ctc target symbol outside the alphabet");
  if (ctc_min_slots(target) > T)
    throw InfeasibleTarget("target needs " +
                           std::to_string(ctc_min_slots(target)) +
                           " slots, only " + std::to_string(T) + " available");

  const double kNegInf = -std::numeric_limits<double>::infinity();

  // per-slot log softmax, computed in double regardless of S
  auto log_probs = std::make_shared<MatX<double>>(T, K);
  for (int t = 0; t < T; ++t) {
    const double m = static_cast<double>(slot_logits->value.row(t).maxCoeff());
    double z = 0.0;
    for (int k = 0; k < K; ++k)
      z += std::exp(static_cast<double>(slot_logits->value(t, k)) - m);
    const double log_z = m + std::log(z);
    for (int k = 0; k < K; ++k)
      (*log_probs)(t, k) = static_cast<double>(slot_logits->value(t, k)) - log_z;
  }

  // blank-extended target
  auto extended = std::make_shared<std::vector<int>>();
  extended->push_back(blank);
  for (int c : target) {
    extended->push_back(c);
    extended->push_back(blank);
  }
  const int ext_len = static_cast<int>(extended->size());

  const auto allows_skip = [extended, blank](int s) {
    return s >= 2 && (*extended)[s] != blank &&
           (*extended)[s] != (*extended)[s - 2];
  };

  // forward pass
  auto alpha = std::make_shared<MatX<double>>(MatX<double>::Constant(T, ext_len, kNegInf));
  (*alpha)(0, 0) = (*log_probs)(0, (*extended)[0]);
  if (ext_len > 1) (*alpha)(0, 1) = (*log_probs)(0, (*extended)[1]);
  for (int t = 1; t < T; ++t)
    for (int s = 0; s < ext_len; ++s) {
      double acc = (*alpha)(t - 1, s);
      if (s >= 1) acc = ctc_detail::log_add(acc, (*alpha)(t - 1, s - 1));
      if (allows_skip(s)) acc = ctc_detail::log_add(acc, (*alpha)(t - 1, s - 2));
      (*alpha)(t, s) = acc + (*log_probs)(t, (*extended)[s]);
    }

  double log_p = (*alpha)(T - 1, ext_len - 1);
  if (ext_len > 1)
    log_p = ctc_detail::log_add(log_p, (*alpha)(T - 1, ext_len - 2));
  if (log_p == kNegInf)
    throw InfeasibleTarget("no feasible path for the target");
  // p <= 1 holds mathematically; rounding can push log_p a hair above 0
  const double loss = std::max(0.0, -log_p);

  return tape.track(
      MatX<S>(MatX<S>::Constant(1, 1, static_cast<S>(loss))), {slot_logits},
      [slot_logits, log_probs, extended, alpha, log_p, T, K, ext_len, blank,
       allows_skip](Node<S>& n) {
        if (!slot_logits->requires_grad) return;
        const double upstream = static_cast<double>(n.grad(0, 0));
        const double kInfNeg = -std::numeric_limits<double>::infinity();

        // backward pass (suffix probabilities including the slot term)
        MatX<double> beta = MatX<double>::Constant(T, ext_len, kInfNeg);
        beta(T - 1, ext_len - 1) = (*log_probs)(T - 1, (*extended)[ext_len - 1]);
        if (ext_len > 1)
          beta(T - 1, ext_len - 2) = (*log_probs)(T - 1, (*extended)[ext_len - 2]);
        for (int t = T - 2; t >= 0; --t)
          for (int s = 0; s < ext_len; ++s) {
            double acc = beta(t + 1, s);
            if (s + 1 < ext_len) acc = ctc_detail::log_add(acc, beta(t + 1, s + 1));
            if (s + 2 < ext_len && allows_skip(s + 2))
              acc = ctc_detail::log_add(acc, beta(t + 1, s + 2));
            beta(t, s) = acc + (*log_probs)(t, (*extended)[s]);
          }

        MatX<double> g(T, K);
        std::vector<double> log_gamma(K);
        for (int t = 0; t < T; ++t) {
          std::fill(log_gamma.begin(), log_gamma.end(), kInfNeg);
          for (int s = 0; s < ext_len; ++s) {
            const int k = (*extended)[s];
            log_gamma[k] =
                ctc_detail::log_add(log_gamma[k], (*alpha)(t, s) + beta(t, s));
          }
          for (int k = 0; k < K; ++k) {
            const double y = std::exp((*log_probs)(t, k));
            double posterior = 0.0;
            if (log_gamma[k] != kInfNeg)
              posterior = std::exp(log_gamma[k] - log_p - (*log_probs)(t, k));
            g(t, k) = upstream * (y - posterior);
          }
        }
        slot_logits->accumulate(g.template cast<S>());
      });
}

// ---------------------------------------------------------------------------
// combined objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
  double det_char = 0.0;
  double det_pos = 0.0;
  double recog = 0.0;
  double total = 0.0;
};

template <typename S>
struct SampleOutput {
  Var<S> char_logits;  // N x 37
  Var<S> pos_logits;   // N x (N+1)
  Var<S> slot_logits;  // N x 37
};

template <typename S>
struct BatchLossNodes {
  Var<S> det_char, det_pos, recog, total;
  LossBreakdown values;
};

// Per-sample losses. The matching runs on detached softmax probabilities.
template <typename S>
BatchLossNodes<S> sample_loss(Tape<S>& tape, const SampleOutput<S>& out,
                              const LabelSet& labels, double beta = 1.0,
                              double null_weight = 0.1) {
  const int n = static_cast<int>(out.char_logits->value.rows());
  MatX<S> char_probs = out.char_logits->value;
  MatX<S> pos_probs = out.pos_logits->value;
  const auto softmax_inplace = [](MatX<S>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const S mx = m.row(r).maxCoeff();
      m.row(r) = (m.row(r).array() - mx).exp();
      m.row(r) /= m.row(r).sum();
    }
  };
  softmax_inplace(char_probs);
  softmax_inplace(pos_probs);
  if (static_cast<int>(labels.char_classes.size()) != n)
    throw ShapeMismatch("labels padded to a different slot count than the model");

  const auto assignment = hungarian_assign(
      match_cost_matrix(char_probs, pos_probs, labels, beta));

  BatchLossNodes<S> nodes;
  auto [det_char, det_pos] =
      detection_loss(tape, out.char_logits, out.pos_logits, labels,
                     assignment.gt_to_pred, null_weight);
  nodes.det_char = det_char;
  nodes.det_pos = det_pos;

  const CharSet cs;
  std::vector<int> target;
  target.reserve(labels.word.size());
  for (char c : labels.word) target.push_back(cs.index_of(c));
  nodes.recog = ctc_loss(tape, out.slot_logits, target, cs.null_index());

  nodes.total = add_scalars(tape, {nodes.det_char, nodes.det_pos, nodes.recog});
  nodes.values.det_char = static_cast<double>(nodes.det_char->value(0, 0));
  nodes.values.det_pos = static_cast<double>(nodes.det_pos->value(0, 0));
  nodes.values.recog = static_cast<double>(nodes.recog->value(0, 0));
  nodes.values.total = static_cast<double>(nodes.total->value(0, 0));
  return nodes;
}

// Batch-mean objective.
template <typename S>
BatchLossNodes<S> total_loss(Tape<S>& tape,
                             const std::vector<SampleOutput<S>>& outputs,
                             const std::vector<LabelSet>& labels,
                             double beta = 1.0, double null_weight = 0.1) {
  if (outputs.empty()) throw EmptyBatch();
  if (outputs.size() != labels.size())
    throw ShapeMismatch("batch outputs and labels differ in length");
  std::vector<Var<S>> det_char_terms, det_pos_terms, recog_terms;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    auto nodes = sample_loss(tape, outputs[i], labels[i], beta, null_weight);
    det_char_terms.push_back(nodes.det_char);
    det_pos_terms.push_back(nodes.det_pos);
    recog_terms.push_back(nodes.recog);
  }
  const S inv = static_cast<S>(1.0 / outputs.size());
  BatchLossNodes<S> batch;
  batch.det_char = scale(tape, add_scalars(tape, det_char_terms), inv);
  batch.det_pos = scale(tape, add_scalars(tape, det_pos_terms), inv);
  batch.recog = scale(tape, add_scalars(tape, recog_terms), inv);
  batch.total =
      add_scalars(tape, {batch.det_char, batch.det_pos, batch.recog});
  batch.values.det_char = static_cast<double>(batch.det_char->value(0, 0));
  batch.values.det_pos = static_cast<double>(batch.det_pos->value(0, 0));
  batch.values.recog = static_cast<double>(batch.recog->value(0, 0));
  batch.values.total = static_cast<double>(batch.total->value(0, 0));
  if (!std::isfinite(batch.values.total))
    throw NonFinite("batch loss is NaN/Inf");
  return batch;
}

}  // namespace i2c2w
