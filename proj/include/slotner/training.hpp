#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slotner/matching.hpp"
#include "slotner/model.hpp"
#include "slotner/nn/graph.hpp"

namespace slotner {

class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class MatchingMode { kDynamic, kStatic };
enum class TrainMode { kFull, kLocateOnly };

// How boundary supervision is applied to a matched, non-null prompt.
//   gold: only -log p(l) and -log p(r) at the gold words;
//   bce:  additionally -log(1 - p) at every other word of the sentence.
enum class LocateLoss { kGold, kBce };

struct LossOptions {
  double lambda1 = 1.0;
  double lambda2 = 2.0;
  bool typing = true;  // off in locate-only training
  LocateLoss locate = LocateLoss::kBce;
};

struct LossVars {
  nn::Var typing;
  nn::Var locating;
  nn::Var total;
};

// Differentiable L1, L2 and L = lambda1 L1 + lambda2 L2 for a fixed
// assignment sigma. Log-probabilities are taken from the logits directly
// and floored at log(1e-12).
template <class T>
LossVars loss_graph(nn::Graph<T>& g, const ForwardVars& f, const AugmentedLabelSet& labels,
                    const std::vector<std::size_t>& sigma, const LossOptions& opts) {
  using Cell = typename nn::Graph<T>::Cell;
  const auto& type_logits = g.value(f.type_logits);
  const std::size_t null_class = type_logits.cols() - 1;
  const std::size_t words = g.value(f.left_logits).cols();
  if (sigma.size() != labels.size()) {
    throw ShapeError("loss_graph: sigma has " + std::to_string(sigma.size()) + " entries for " +
                     std::to_string(labels.size()) + " labels");
  }
  std::vector<Cell> type_cells, left_cells, right_cells, left_neg, right_neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Entity& e = labels.labels[i];
    const std::size_t prompt = sigma[i];
    if (e.is_null()) {
      type_cells.push_back({prompt, null_class});
      continue;
    }
    if (e.left < 1 || e.right > words || e.left > e.right) {
      throw Error("loss_graph: label span (" + std::to_string(e.left) + ", " +
                  std::to_string(e.right) + ") outside words 1.." + std::to_string(words));
    }
    if (e.has_type()) type_cells.push_back({prompt, static_cast<std::size_t>(e.type)});
    left_cells.push_back({prompt, e.left - 1});
    right_cells.push_back({prompt, e.right - 1});
    if (opts.locate == LocateLoss::kBce) {
      for (std::size_t j = 0; j < words; ++j) {
        if (j != e.left - 1) left_neg.push_back({prompt, j});
        if (j != e.right - 1) right_neg.push_back({prompt, j});
      }
    }
  }
  LossVars out;
  out.typing = g.weighted_sum({{g.log_softmax_gather(f.type_logits, type_cells), T{-1}}});
  std::vector<std::pair<nn::Var, T>> locate_terms{
      {g.log_sigmoid_gather(f.left_logits, left_cells, false), T{-1}},
      {g.log_sigmoid_gather(f.right_logits, right_cells, false), T{-1}}};
  if (opts.locate == LocateLoss::kBce) {
    locate_terms.push_back({g.log_sigmoid_gather(f.left_logits, left_neg, true), T{-1}});
    locate_terms.push_back({g.log_sigmoid_gather(f.right_logits, right_neg, true), T{-1}});
  }
  out.locating = g.weighted_sum(locate_terms);
  std::vector<std::pair<nn::Var, T>> total{{out.locating, static_cast<T>(opts.lambda2)}};
  if (opts.typing) total.push_back({out.typing, static_cast<T>(opts.lambda1)});
  out.total = g.weighted_sum(total);
  return out;
}

}  // namespace slotner
