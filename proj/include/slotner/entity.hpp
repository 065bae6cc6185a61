#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "slotner/nn/array.hpp"

namespace slotner {

// An entity span with inclusive 1-based word boundaries. The null label
// (no entity) carries no boundaries; an untyped label has boundaries but no
// type (position-only annotation).
struct Entity {
  static constexpr std::int32_t kNull = -1;
  static constexpr std::int32_t kUntyped = -2;

  std::size_t left = 0;
  std::size_t right = 0;
  std::int32_t type = kNull;

  static Entity null() { return Entity{}; }
  static Entity untyped(std::size_t l, std::size_t r) { return Entity{l, r, kUntyped}; }

  bool is_null() const { return type == kNull; }
  bool has_type() const { return type >= 0; }

  auto operator<=>(const Entity&) const = default;
};

// Per-prompt model outputs. Row i holds prompt i; type columns run over the
// C entity types followed by the null class; boundary columns run over
// words 1..N (column j is word j + 1).
struct PredictionSet {
  nn::Array<double> type_probs;   // [M x (C+1)]
  nn::Array<double> left_probs;   // [M x N]
  nn::Array<double> right_probs;  // [M x N]

  std::size_t prompts() const { return type_probs.rows(); }
  std::size_t classes() const { return type_probs.cols(); }
  std::size_t null_class() const { return classes() - 1; }
  std::size_t words() const { return left_probs.cols(); }
};

}  // namespace slotner
