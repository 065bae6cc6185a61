#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "slotner/nn/graph.hpp"

namespace slotner::nn {

template <class T>
using LossBuilder = std::function<Var(Graph<T>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

template <class T>
T evaluate_loss(const LossBuilder<T>& build) {
  Graph<T> g;
  const T v = g.value(build(g)).data.at(0);
  if (!std::isfinite(v)) throw Error("grad_check: non-finite loss");
  return v;
}

// Reverse-mode gradients of the scalar built by `build`, one array per param.
template <class T>
std::vector<Array<T>> analytic_gradients(const LossBuilder<T>& build,
                                         const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->zero_grad();
  Graph<T> g;
  Var loss = build(g);
  if (!std::isfinite(g.value(loss).data.at(0))) throw Error("grad_check: non-finite loss");
  g.backward(loss);
  std::vector<Array<T>> out;
  out.reserve(params.size());
  for (auto* p : params) out.push_back(p->grad);
  return out;
}

// Central differences (f(w + eps) - f(w - eps)) / 2 eps of `loss_at` for
// every coordinate of `params`, evaluated in long double.
template <class T, class LossAt>
std::vector<Array<long double>> central_differences(LossAt&& loss_at, const std::vector<Parameter<T>*>& params,
                                                    T epsilon) {
  std::vector<Array<long double>> out;
  out.reserve(params.size());
  for (auto* p : params) {
    auto& value = p->value.data;
    Array<long double> d(p->value.shape);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T saved = value[i];
      value[i] = saved + epsilon;
      const long double up = loss_at();
      value[i] = saved - epsilon;
      const long double down = loss_at();
      value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw Error("grad_check: non-finite loss at perturbed coordinate");
      }
      d.data[i] = (up - down) / (2.0L * epsilon);
    }
    out.push_back(std::move(d));
  }
  return out;
}

// |a - c| / max(|a|, |c|, 1e-8)
inline double relative_error(double a, double c) {
  return std::abs(a - c) / std::max({std::abs(a), std::abs(c), 1e-8});
}

template <class A, class R>
GradCheckResult max_relative_error(const std::vector<Array<A>>& analytic, const std::vector<Array<R>>& reference) {
  if (analytic.size() != reference.size()) {
    throw ShapeError("max_relative_error: " + std::to_string(analytic.size()) + " gradients for " +
                     std::to_string(reference.size()) + " references");
  }
  GradCheckResult res;
  for (std::size_t pi = 0; pi < analytic.size(); ++pi) {
    if (analytic[pi].shape != reference[pi].shape) {
      throw_shape("max_relative_error", analytic[pi].shape, reference[pi].shape);
    }
    for (std::size_t i = 0; i < analytic[pi].size(); ++i) {
      const double err = relative_error(static_cast<double>(analytic[pi].data[i]),
                                        static_cast<double>(reference[pi].data[i]));
      ++res.coordinates;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = pi;
        res.worst_index = i;
      }
    }
  }
  return res;
}

// Compares `analytic` against central differences of `loss_at`, which is
// evaluated after each +-epsilon perturbation of a coordinate of `params`.
// The perturbed parameters may be a higher-precision replica of the ones
// that produced `analytic`.
template <class A, class T, class LossAt>
GradCheckResult compare_gradients(const std::vector<Array<A>>& analytic, LossAt&& loss_at,
                                  const std::vector<Parameter<T>*>& params, T epsilon) {
  if (analytic.size() != params.size()) {
    throw ShapeError("compare_gradients: " + std::to_string(analytic.size()) +
                     " gradients for " + std::to_string(params.size()) + " parameters");
  }
  return max_relative_error(analytic, central_differences(loss_at, params, epsilon));
}

// Max relative error between reverse-mode and central-difference gradients.
template <class T>
GradCheckResult grad_check(const LossBuilder<T>& build, const std::vector<Parameter<T>*>& params,
                           T epsilon) {
  const auto analytic = analytic_gradients(build, params);
  return compare_gradients(analytic, [&] { return evaluate_loss(build); }, params, epsilon);
}

}  // namespace slotner::nn
