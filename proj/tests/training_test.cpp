#include <cmath>

#include <gtest/gtest.h>

#include "slotner/gradient_suite.hpp"
#include "slotner/training.hpp"

using namespace slotner;

namespace {

const std::vector<std::string> kWords{"Alan", "Turing", "studied", "at", "Cambridge"};

struct Fixture {
  ModelConfig cfg;
  Model<double> model;

  static ModelConfig config() {
    ModelConfig c;
    c.hidden = 8;
    c.heads = 2;
    c.layers = 1;
    c.interaction_layers = 1;
    c.ffn = 16;
    c.prompts = 4;
    c.types = 2;
    c.max_len = 32;
    return c;
  }
  static Vocab vocab() {
    Vocab v(4);
    for (const auto& w : kWords) v.add_word(w);
    return v;
  }
  Fixture() : cfg(config()), model(cfg, vocab(), init_params<double>(cfg, vocab().size(), 31)) {}
};

AugmentedLabelSet labels_for(std::vector<Entity> gold, std::size_t prompts) {
  return augment_gold(gold, prompts, default_upper_limit(prompts));
}

}  // namespace

TEST(LossGraph, DefaultWeightsAreOneAndTwo) {
  LossOptions o;
  EXPECT_EQ(o.lambda1, 1.0);
  EXPECT_EQ(o.lambda2, 2.0);
  EXPECT_TRUE(o.typing);
  EXPECT_EQ(o.locate, LocateLoss::kBce);
}

TEST(LossGraph, GoldModeMatchesProbabilityLosses) {
  Fixture fx;
  nn::Graph<double> g;
  auto f = fx.model.forward(g, fx.model.prompted(kWords));
  const auto pred = Model<double>::predictions(g, f);
  const auto labels = labels_for({{1, 2, 0}, {5, 5, 1}}, 4);
  const std::vector<std::size_t> sigma{2, 0, 3, 1};
  LossOptions o;
  o.locate = LocateLoss::kGold;
  const auto vars = loss_graph(g, f, labels, sigma, o);
  const auto ref = compute_losses(labels, sigma, pred);
  EXPECT_NEAR(g.value(vars.typing).data[0], ref.typing, 1e-10);
  EXPECT_NEAR(g.value(vars.locating).data[0], ref.locating, 1e-10);
  EXPECT_NEAR(g.value(vars.total).data[0], ref.total, 1e-10);
}

TEST(LossGraph, BceAddsComplementTermsForOtherWords) {
  Fixture fx;
  nn::Graph<double> g;
  auto f = fx.model.forward(g, fx.model.prompted(kWords));
  const auto pred = Model<double>::predictions(g, f);
  AugmentedLabelSet labels;
  labels.labels = {Entity{2, 4, 1}, Entity::null(), Entity::null(), Entity::null()};
  labels.origin = {0, std::nullopt, std::nullopt, std::nullopt};
  const std::vector<std::size_t> sigma{3, 0, 1, 2};
  const auto vars = loss_graph(g, f, labels, sigma, LossOptions{});
  double expected = 0;
  for (std::size_t j = 0; j < kWords.size(); ++j) {
    const double pl = pred.left_probs(3, j), pr = pred.right_probs(3, j);
    expected -= j == 1 ? std::log(pl) : std::log(1 - pl);
    expected -= j == 3 ? std::log(pr) : std::log(1 - pr);
  }
  EXPECT_NEAR(g.value(vars.locating).data[0], expected, 1e-10);
  const double typing = g.value(vars.typing).data[0];
  EXPECT_NEAR(g.value(vars.total).data[0], typing + 2.0 * expected, 1e-10);
}

TEST(LossGraph, LocateOnlyDropsTypingFromTotal) {
  Fixture fx;
  nn::Graph<double> g;
  auto f = fx.model.forward(g, fx.model.prompted(kWords));
  LossOptions o;
  o.typing = false;
  o.lambda2 = 3.0;
  const auto vars = loss_graph(g, f, labels_for({Entity::untyped(1, 2)}, 4), {0, 1, 2, 3}, o);
  EXPECT_NEAR(g.value(vars.total).data[0], 3.0 * g.value(vars.locating).data[0], 1e-12);
}

TEST(LossGraph, AllNullLabelsHaveNoLocatingLoss) {
  Fixture fx;
  nn::Graph<double> g;
  auto f = fx.model.forward(g, fx.model.prompted(kWords));
  const auto vars = loss_graph(g, f, labels_for({}, 4), {0, 1, 2, 3}, LossOptions{});
  EXPECT_EQ(g.value(vars.locating).data[0], 0.0);
  EXPECT_GT(g.value(vars.typing).data[0], 0.0);
}

TEST(LossGraph, RejectsInvalidInput) {
  Fixture fx;
  nn::Graph<double> g;
  auto f = fx.model.forward(g, fx.model.prompted(kWords));
  EXPECT_THROW(loss_graph(g, f, labels_for({{1, 2, 0}}, 4), {0, 1}, LossOptions{}), ShapeError);
  AugmentedLabelSet bad;
  bad.labels = {Entity{4, 6, 0}, Entity::null(), Entity::null(), Entity::null()};
  bad.origin = {0, std::nullopt, std::nullopt, std::nullopt};
  EXPECT_THROW(loss_graph(g, f, bad, {0, 1, 2, 3}, LossOptions{}), Error);
  bad.labels[0] = Entity{3, 2, 0};
  EXPECT_THROW(loss_graph(g, f, bad, {0, 1, 2, 3}, LossOptions{}), Error);
}

TEST(LossGraph, FullModelGradientMatchesFiniteDifferencesInDouble) {
  const auto r = run_grad_instance(101);
  EXPECT_LT(r.error64, 1e-4);
  EXPECT_GT(r.coordinates, 1000u);
}
