#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "slotner/entity.hpp"
#include "slotner/nn/array.hpp"

namespace slotner {

// Gold labels padded to the prompt count. origin[i] is the index of the
// gold entity label i was copied from, or nullopt for null padding.
struct AugmentedLabelSet {
  std::vector<Entity> labels;
  std::vector<std::optional<std::size_t>> origin;

  std::size_t size() const { return labels.size(); }
  std::size_t non_null() const {
    return static_cast<std::size_t>(
        std::count_if(labels.begin(), labels.end(), [](const Entity& e) { return !e.is_null(); }));
  }
};

// sigma[i] is the prompt assigned to label i (0-based).
struct Assignment {
  std::vector<std::size_t> sigma;
  double total_cost = 0.0;
  nn::Array<double> cost_matrix;
};

struct Filling {
  AugmentedLabelSet labels;
  Assignment assignment;
};

struct Losses {
  double typing = 0.0;    // L1
  double locating = 0.0;  // L2
  double total = 0.0;     // lambda1 * L1 + lambda2 * L2
};

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kUpperLimitRatio = 0.9;

// U = floor(0.9 M)
inline std::size_t default_upper_limit(std::size_t prompts) {
  return static_cast<std::size_t>(std::floor(kUpperLimitRatio * static_cast<double>(prompts)));
}

namespace detail {
inline void check_boundary(const Entity& label, const PredictionSet& pred) {
  if (label.left < 1 || label.right < 1 || label.left > pred.words() ||
      label.right > pred.words()) {
    throw Error("match_cost: boundary (" + std::to_string(label.left) + ", " +
                std::to_string(label.right) + ") outside words 1.." +
                std::to_string(pred.words()));
  }
}
}  // namespace detail

// -1{t != null} [p^t(t) + p^l(l) + p^r(r)]; untyped labels drop the p^t term.
inline double match_cost(const Entity& label, const PredictionSet& pred, std::size_t prompt) {
  if (label.is_null()) return 0.0;
  detail::check_boundary(label, pred);
  double score = pred.left_probs(prompt, label.left - 1) + pred.right_probs(prompt, label.right - 1);
  if (label.has_type()) score += pred.type_probs(prompt, static_cast<std::size_t>(label.type));
  return -score;
}

// Rows are labels, columns are prompts.
inline nn::Array<double> cost_matrix(const AugmentedLabelSet& labels, const PredictionSet& pred) {
  const std::size_t m = labels.size();
  if (m != pred.prompts()) {
    throw ShapeError("cost_matrix: " + std::to_string(m) + " labels for " +
                     std::to_string(pred.prompts()) + " prompts");
  }
  nn::Array<double> c({m, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) c(i, j) = match_cost(labels.labels[i], pred, j);
  return c;
}

// Repeats the gold entities round-robin until max(K, min(U, M)) labels are
// non-null, then pads with null labels to length M.
inline AugmentedLabelSet augment_gold(const std::vector<Entity>& gold, std::size_t prompts,
                                      std::size_t upper_limit) {
  const std::size_t k = gold.size();
  if (k > prompts) {
    throw Error("augment_gold: " + std::to_string(k) + " gold entities exceed " +
                std::to_string(prompts) + " prompts");
  }
  if (upper_limit > prompts) {
    throw Error("augment_gold: upper limit " + std::to_string(upper_limit) +
                " exceeds prompt count " + std::to_string(prompts));
  }
  const std::size_t filled = k == 0 ? 0 : std::max(k, upper_limit);
  AugmentedLabelSet out;
  out.labels.reserve(prompts);
  for (std::size_t i = 0; i < filled; ++i) {
    out.labels.push_back(gold[i % k]);
    out.origin.emplace_back(i % k);
  }
  while (out.labels.size() < prompts) {
    out.labels.push_back(Entity::null());
    out.origin.emplace_back(std::nullopt);
  }
  return out;
}

namespace detail {

// Kuhn augmenting path on the tight-edge graph restricted to rows >= first.
inline bool try_augment(std::size_t row, const std::vector<std::vector<std::size_t>>& adj,
                        std::vector<std::size_t>& col_owner, std::vector<char>& seen,
                        const std::vector<char>& col_fixed) {
  constexpr std::size_t kFree = std::numeric_limits<std::size_t>::max();
  for (std::size_t c : adj[row]) {
    if (col_fixed[c] || seen[c]) continue;
    seen[c] = 1;
    if (col_owner[c] == kFree || try_augment(col_owner[c], adj, col_owner, seen, col_fixed)) {
      col_owner[c] = row;
      return true;
    }
  }
  return false;
}

// True when rows [first, n) can be perfectly matched to unfixed columns.
inline bool completable(std::size_t first, const std::vector<std::vector<std::size_t>>& adj,
                        const std::vector<char>& col_fixed) {
  constexpr std::size_t kFree = std::numeric_limits<std::size_t>::max();
  const std::size_t n = adj.size();
  std::vector<std::size_t> owner(n, kFree);
  std::vector<char> seen(n);
  for (std::size_t r = first; r < n; ++r) {
    std::fill(seen.begin(), seen.end(), 0);
    if (!try_augment(r, adj, owner, seen, col_fixed)) return false;
  }
  return true;
}

}  // namespace detail

// Minimum-cost perfect assignment of rows to columns (Hungarian method with
// potentials, O(n^3)). Among optimal permutations the lexicographically
// smallest sigma is returned: every optimal permutation uses only edges
// that are tight under the optimal potentials, so a greedy pass over rows
// picking the smallest tight column that still admits a perfect tight
// matching yields it.
inline Assignment hungarian_solve(const nn::Array<double>& cost) {
  nn::require_rank2("hungarian_solve", cost);
  const std::size_t n = cost.rows();
  if (cost.cols() != n) {
    throw ShapeError("hungarian_solve: matrix must be square, got " + nn::shape_string(cost.shape));
  }
  double scale = 0.0;
  for (double v : cost.data) {
    if (!std::isfinite(v)) throw Error("hungarian_solve: non-finite cost entry");
    scale = std::max(scale, std::abs(v));
  }
  Assignment out;
  out.cost_matrix = cost;
  if (n == 0) return out;

  // 1-based potentials; p[j] is the row matched to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
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
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  const double tol = 1e-9 * (1.0 + scale);
  std::vector<std::vector<std::size_t>> tight(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (cost(i, j) - u[i + 1] - v[j + 1] <= tol) tight[i].push_back(j);

  out.sigma.assign(n, 0);
  std::vector<char> col_fixed(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool placed = false;
    for (std::size_t j : tight[i]) {
      if (col_fixed[j]) continue;
      col_fixed[j] = 1;
      if (detail::completable(i + 1, tight, col_fixed)) {
        out.sigma[i] = j;
        placed = true;
        break;
      }
      col_fixed[j] = 0;
    }
    if (!placed) {
      // Only reachable through rounding in the potentials; keep the
      // Hungarian matching itself.
      for (std::size_t j = 1; j <= n; ++j) out.sigma[p[j] - 1] = j - 1;
      break;
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.total_cost += cost(i, out.sigma[i]);
  return out;
}

// Labels sorted by (left, right) go to prompts 1..K in order; the rest are
// null. No cost minimization.
inline Filling static_fill(std::vector<Entity> gold, std::size_t prompts) {
  if (gold.size() > prompts) {
    throw Error("static_fill: " + std::to_string(gold.size()) + " gold entities exceed " +
                std::to_string(prompts) + " prompts");
  }
  std::stable_sort(gold.begin(), gold.end(), [](const Entity& a, const Entity& b) {
    return a.left != b.left ? a.left < b.left : a.right < b.right;
  });
  Filling f;
  f.labels = augment_gold(gold, prompts, 0);
  f.assignment.sigma.resize(prompts);
  std::iota(f.assignment.sigma.begin(), f.assignment.sigma.end(), std::size_t{0});
  return f;
}

// Augments the gold set and matches it to the prompts at minimum cost.
inline Filling dynamic_fill(const std::vector<Entity>& gold, const PredictionSet& pred,
                            std::size_t upper_limit) {
  Filling f;
  f.labels = augment_gold(gold, pred.prompts(), upper_limit);
  f.assignment = hungarian_solve(cost_matrix(f.labels, pred));
  return f;
}

// L1 = -sum_i log p^t_{sigma(i)}(t_i) over all labels (null is a class);
// L2 = -sum_{t_i != null} [log p^l_{sigma(i)}(l_i) + log p^r_{sigma(i)}(r_i)].
// Untyped labels contribute only to L2. Probabilities are floored at 1e-12.
inline Losses compute_losses(const AugmentedLabelSet& labels, const std::vector<std::size_t>& sigma,
                             const PredictionSet& pred, double lambda1 = 1.0,
                             double lambda2 = 2.0) {
  if (sigma.size() != labels.size()) {
    throw ShapeError("compute_losses: sigma has " + std::to_string(sigma.size()) +
                     " entries for " + std::to_string(labels.size()) + " labels");
  }
  auto lg = [](double p) { return std::log(std::max(p, kProbabilityFloor)); };
  Losses out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Entity& e = labels.labels[i];
    const std::size_t prompt = sigma[i];
    if (e.is_null()) {
      out.typing -= lg(pred.type_probs(prompt, pred.null_class()));
      continue;
    }
    detail::check_boundary(e, pred);
    if (e.has_type()) out.typing -= lg(pred.type_probs(prompt, static_cast<std::size_t>(e.type)));
    out.locating -= lg(pred.left_probs(prompt, e.left - 1)) + lg(pred.right_probs(prompt, e.right - 1));
  }
  out.total = lambda1 * out.typing + lambda2 * out.locating;
  return out;
}

}  // namespace slotner
