#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "slotner/matching.hpp"
#include "slotner/model.hpp"
#include "slotner/nn/gradcheck.hpp"
#include "slotner/training.hpp"

namespace slotner {

// A toy model plus one labelled sentence, used to check full-model
// gradients against finite differences.
struct GradInstance {
  ModelConfig config;
  Vocab vocab;
  std::vector<std::string> words;
  AugmentedLabelSet labels;
  std::vector<std::size_t> sigma;
  ModelParams<double> params;
};

// Parameters are drawn on a unit scale (rather than the training init) so
// that every block contributes gradients well above rounding noise.
inline GradInstance make_grad_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  GradInstance g;
  g.config.hidden = 8;
  g.config.heads = 2;
  g.config.layers = 1;
  g.config.interaction_layers = 1;
  g.config.ffn = 16;
  g.config.types = 2;
  g.config.prompts = uniform(2, 4);
  g.config.max_len = 64;
  const std::size_t n = uniform(5, 8);
  g.vocab = Vocab(g.config.prompts);
  for (std::size_t i = 0; i < n; ++i) {
    g.words.push_back("w" + std::to_string(i));
    g.vocab.add_word(g.words.back());
  }

  const std::size_t k = uniform(1, g.config.prompts);
  std::vector<Entity> gold;
  while (gold.size() < k) {
    std::size_t l = uniform(1, n), r = uniform(1, n);
    if (l > r) std::swap(l, r);
    Entity e{l, r, static_cast<std::int32_t>(uniform(0, g.config.types - 1))};
    if (std::find(gold.begin(), gold.end(), e) == gold.end()) gold.push_back(e);
  }
  g.labels = augment_gold(gold, g.config.prompts, default_upper_limit(g.config.prompts));
  g.sigma.resize(g.config.prompts);
  std::iota(g.sigma.begin(), g.sigma.end(), std::size_t{0});
  std::shuffle(g.sigma.begin(), g.sigma.end(), rng);

  g.params = init_params<double>(g.config, g.vocab.size(), seed);
  g.params.visit([&](const std::string& name, nn::Parameter<double>& p) {
    auto ends_with = [&](const std::string& suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    double base = 0.0, sd;
    if (name == "embedding.token" || name == "embedding.position" || name == "prompt.identity") {
      sd = 1.0;
    } else if (ends_with(".gain")) {
      base = 1.0;
      sd = 0.1;
    } else if (ends_with(".b") || ends_with(".shift")) {
      sd = 0.1;
    } else {
      sd = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
    }
    std::normal_distribution<double> d(0.0, sd);
    // float-representable, so one reference serves both precisions
    for (auto& x : p.value.data) x = static_cast<float>(base + d(rng));
  });
  return g;
}

template <class T>
nn::Var grad_instance_loss(nn::Graph<T>& g, Model<T>& model, const GradInstance& inst) {
  const ForwardVars f = model.forward(g, model.prompted(inst.words));
  return loss_graph(g, f, inst.labels, inst.sigma, LossOptions{}).total;
}

struct GradSuiteCase {
  std::uint64_t seed = 0;
  std::size_t words = 0;
  std::size_t prompts = 0;
  std::size_t coordinates = 0;
  double error32 = 0.0;  // float reverse mode vs reference
  double error64 = 0.0;  // double reverse mode vs reference
  std::string worst32, worst64;
};

// Reverse-mode gradients in float and in double, both against long-double
// central differences of the same loss.
inline GradSuiteCase run_grad_instance(std::uint64_t seed, double epsilon = 1e-6) {
  const GradInstance inst = make_grad_instance(seed);
  Model<float> m32(inst.config, inst.vocab, inst.params.cast<float>());
  Model<double> m64(inst.config, inst.vocab, inst.params);
  Model<long double> ref(inst.config, inst.vocab, inst.params.cast<long double>());

  const auto a32 = nn::analytic_gradients<float>(
      [&](nn::Graph<float>& g) { return grad_instance_loss(g, m32, inst); }, m32.params().all());
  const auto a64 = nn::analytic_gradients<double>(
      [&](nn::Graph<double>& g) { return grad_instance_loss(g, m64, inst); }, m64.params().all());
  const nn::LossBuilder<long double> ref_loss = [&](nn::Graph<long double>& g) {
    return grad_instance_loss(g, ref, inst);
  };
  const auto reference = nn::central_differences([&] { return nn::evaluate_loss(ref_loss); },
                                                 ref.params().all(), static_cast<long double>(epsilon));
  std::vector<std::string> names;
  m64.params().visit([&](const std::string& n, const nn::Parameter<double>&) { names.push_back(n); });

  GradSuiteCase c;
  c.seed = seed;
  c.words = inst.words.size();
  c.prompts = inst.config.prompts;
  const auto r32 = nn::max_relative_error(a32, reference);
  const auto r64 = nn::max_relative_error(a64, reference);
  c.coordinates = r64.coordinates;
  c.error32 = r32.max_rel_error;
  c.error64 = r64.max_rel_error;
  c.worst32 = names[r32.worst_param] + "[" + std::to_string(r32.worst_index) + "]";
  c.worst64 = names[r64.worst_param] + "[" + std::to_string(r64.worst_index) + "]";
  return c;
}

}  // namespace slotner
