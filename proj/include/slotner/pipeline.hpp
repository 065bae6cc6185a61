#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "slotner/corpus.hpp"
#include "slotner/matching.hpp"
#include "slotner/model.hpp"
#include "slotner/training.hpp"

namespace slotner {

struct TrainConfig {
  double learning_rate = 1e-3;
  double warmup_fraction = 0.1;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double lambda1 = 1.0;
  double lambda2 = 2.0;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kFull;
  bool freeze_encoder = false;  // forced on in locate-only mode
  MatchingMode matching = MatchingMode::kDynamic;
  bool label_expansion = true;  // one-to-many (true) or one-to-one matching
  LocateLoss locate_loss = LocateLoss::kBce;
  double grad_clip = 0.0;       // global L2 norm; 0 disables

  void validate() const {
    if (!(learning_rate >= 0.0)) throw Error("TrainConfig: learning rate must be >= 0");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) {
      throw Error("TrainConfig: warmup fraction must lie in [0, 1)");
    }
    if (batch_size == 0) throw Error("TrainConfig: batch size must be >= 1");
  }
};

// Linear warmup from 0 to the peak over the first warmup_fraction of the
// steps, then linear decay to 0 at total_steps.
inline double learning_rate_at(std::size_t step, std::size_t total_steps, double peak,
                               double warmup_fraction) {
  if (total_steps == 0) return 0.0;
  const auto warmup = static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
  if (step >= total_steps) return 0.0;
  if (warmup > 0 && step <= warmup) {
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  }
  return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

template <class T>
class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(ModelParams<T>& params, double lr) {
    ++t_;
    std::size_t i = 0;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    params.visit([&](const std::string&, nn::Parameter<T>& p) {
      if (i == m_.size()) {
        m_.emplace_back(p.value.shape);
        v_.emplace_back(p.value.shape);
      }
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      ++i;
      if (!p.trainable) return;
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad.data[k];
        m[k] = static_cast<T>(beta1 * m[k] + (1.0 - beta1) * g);
        v[k] = static_cast<T>(beta2 * v[k] + (1.0 - beta2) * g * g);
        const double update = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
        p.value.data[k] = static_cast<T>(p.value.data[k] - update);
      }
    });
  }

  std::size_t steps() const { return t_; }

 private:
  std::size_t t_ = 0;
  std::vector<nn::Array<T>> m_, v_;
};

struct Instance {
  std::string id;
  std::vector<std::string> words;
  std::vector<Entity> gold;
};

// Instances of a corpus; K > M is rejected rather than truncated.
inline std::vector<Instance> make_instances(const Corpus& c, std::size_t prompts) {
  std::vector<Instance> out;
  out.reserve(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& r = c.records[i];
    if (r.entities.size() > prompts) {
      throw Error("record " + (r.id.empty() ? std::to_string(i + 1) : r.id) + " has " +
                  std::to_string(r.entities.size()) + " entities, more than the " +
                  std::to_string(prompts) + " prompts");
    }
    out.push_back({r.id.empty() ? std::to_string(i + 1) : r.id, r.tokens, c.entities(i)});
  }
  return out;
}

struct StepResult {
  double loss = 0.0;       // L (batch mean)
  double typing = 0.0;     // L1
  double locating = 0.0;   // L2
  double learning_rate = 0.0;
  std::size_t step = 0;
};

// Labels and assignment for one instance under the configured filling.
inline Filling fill_slots(const Instance& inst, const PredictionSet& pred, const TrainConfig& cfg) {
  const std::size_t m = pred.prompts();
  if (cfg.matching == MatchingMode::kStatic) return static_fill(inst.gold, m);
  const std::size_t upper = cfg.label_expansion ? default_upper_limit(m) : 0;
  return dynamic_fill(inst.gold, pred, upper);
}

// Forward, match, loss, backward for one instance; gradients accumulate
// into the model parameters scaled by `weight`.
template <class T>
Losses accumulate_instance(Model<T>& model, const Instance& inst, const TrainConfig& cfg, double weight) {
  nn::Graph<T> g;
  const auto seq = model.prompted(inst.words);
  const ForwardVars f = model.forward(g, seq);
  const PredictionSet pred = Model<T>::predictions(g, f);
  for (const auto* a : {&pred.type_probs, &pred.left_probs, &pred.right_probs}) {
    if (!std::all_of(a->data.begin(), a->data.end(), [](double v) { return std::isfinite(v); })) {
      throw TrainingError("non-finite prediction on instance " + inst.id);
    }
  }
  const Filling fill = fill_slots(inst, pred, cfg);
  LossOptions opts;
  opts.lambda1 = cfg.lambda1;
  opts.lambda2 = cfg.lambda2;
  opts.typing = cfg.mode == TrainMode::kFull;
  opts.locate = cfg.locate_loss;
  const LossVars loss = loss_graph(g, f, fill.labels, fill.assignment.sigma, opts);
  Losses out;
  out.typing = g.value(loss.typing).data[0];
  out.locating = g.value(loss.locating).data[0];
  out.total = g.value(loss.total).data[0];
  if (!std::isfinite(out.total)) {
    throw TrainingError("non-finite loss on instance " + inst.id);
  }
  nn::Var scaled = g.weighted_sum({{loss.total, static_cast<T>(weight)}});
  g.backward(scaled);
  return out;
}

template <class T>
class Trainer {
 public:
  using StepCallback = std::function<void(const StepResult&)>;

  Trainer(Model<T>& model, TrainConfig cfg, std::size_t total_steps)
      : model_(model), cfg_(std::move(cfg)), total_steps_(total_steps) {
    cfg_.validate();
    const bool freeze = cfg_.freeze_encoder || cfg_.mode == TrainMode::kLocateOnly;
    model_.params().set_encoder_trainable(!freeze);
  }

  static std::size_t steps_for(std::size_t instances, const TrainConfig& cfg) {
    return cfg.epochs * ((instances + cfg.batch_size - 1) / cfg.batch_size);
  }

  std::size_t step_index() const { return step_; }

  // One optimizer step over `batch`: mean loss, gradient, Adam update.
  StepResult train_step(const std::vector<const Instance*>& batch) {
    StepResult res;
    res.step = step_;
    res.learning_rate = learning_rate_at(step_, total_steps_, cfg_.learning_rate, cfg_.warmup_fraction);
    model_.params().zero_grad();
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const Instance* inst : batch) {
      Losses l;
      try {
        l = accumulate_instance(model_, *inst, cfg_, w);
      } catch (const TrainingError& e) {
        throw TrainingError("step " + std::to_string(step_) + ": " + e.what());
      }
      res.loss += w * l.total;
      res.typing += w * l.typing;
      res.locating += w * l.locating;
    }
    if (cfg_.grad_clip > 0.0) clip_gradients(cfg_.grad_clip);
    optimizer_.step(model_.params(), res.learning_rate);
    ++step_;
    return res;
  }

  // Locate-only training on position-level labels (encoder frozen).
  StepResult warmup_locate_train(const std::vector<const Instance*>& batch) {
    if (cfg_.mode != TrainMode::kLocateOnly) {
      throw Error("warmup_locate_train requires mode = locate_only");
    }
    return train_step(batch);
  }

  // Runs all epochs over `data`, shuffling with the configured seed.
  void fit(const std::vector<Instance>& data, const StepCallback& on_step = {}) {
    std::mt19937_64 rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
        std::vector<const Instance*> batch;
        for (std::size_t i = b; i < std::min(order.size(), b + cfg_.batch_size); ++i) {
          batch.push_back(&data[order[i]]);
        }
        const StepResult r = train_step(batch);
        if (on_step) on_step(r);
      }
    }
  }

 private:
  void clip_gradients(double max_norm) {
    double sq = 0.0;
    model_.params().visit([&](const std::string&, nn::Parameter<T>& p) {
      if (!p.trainable) return;
      for (T g : p.grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
    });
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw TrainingError("step " + std::to_string(step_) + ": non-finite gradient");
    if (norm <= max_norm) return;
    const T scale = static_cast<T>(max_norm / norm);
    model_.params().visit([&](const std::string&, nn::Parameter<T>& p) {
      if (!p.trainable) return;
      for (T& g : p.grad.data) g *= scale;
    });
  }

  Model<T>& model_;
  TrainConfig cfg_;
  std::size_t total_steps_;
  std::size_t step_ = 0;
  Adam<T> optimizer_;
};

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline PRF prf(std::size_t tp, std::size_t predicted, std::size_t gold) {
  PRF r;
  r.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
  r.recall = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
  const double s = r.precision + r.recall;
  r.f1 = s > 0.0 ? 2.0 * r.precision * r.recall / s : 0.0;
  return r;
}

struct EvalReport {
  PRF exact;       // micro over (l, r, t)
  PRF locating;    // micro over (l, r)
  double typing_accuracy = 0.0;  // over predictions whose span is a gold span
  std::vector<PRF> per_type;
  std::size_t gold_entities = 0;
  std::size_t predicted_entities = 0;
};

// Micro metrics over sentences. Entity lists are treated as sets.
inline EvalReport evaluate(const std::vector<std::vector<Entity>>& gold,
                           const std::vector<std::vector<Entity>>& predicted, std::size_t types) {
  if (gold.size() != predicted.size()) {
    throw Error("evaluate: " + std::to_string(predicted.size()) + " prediction lists for " +
                std::to_string(gold.size()) + " sentences");
  }
  EvalReport rep;
  std::size_t tp = 0, n_pred = 0, n_gold = 0;
  std::size_t loc_tp = 0, loc_pred = 0, loc_gold = 0;
  std::size_t located = 0, typed_right = 0;
  std::vector<std::size_t> t_tp(types), t_pred(types), t_gold(types);
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const std::set<Entity> g(gold[s].begin(), gold[s].end());
    const std::set<Entity> p(predicted[s].begin(), predicted[s].end());
    std::set<std::pair<std::size_t, std::size_t>> gs, ps;
    for (const auto& e : g) gs.emplace(e.left, e.right);
    for (const auto& e : p) ps.emplace(e.left, e.right);
    n_gold += g.size();
    n_pred += p.size();
    for (const auto& e : p) {
      const bool hit = g.count(e) > 0;
      tp += hit;
      if (gs.count({e.left, e.right})) {
        ++located;
        typed_right += hit;
      }
      if (e.has_type() && static_cast<std::size_t>(e.type) < types) {
        ++t_pred[static_cast<std::size_t>(e.type)];
        t_tp[static_cast<std::size_t>(e.type)] += hit;
      }
    }
    for (const auto& e : g) {
      if (e.has_type() && static_cast<std::size_t>(e.type) < types) ++t_gold[static_cast<std::size_t>(e.type)];
    }
    loc_gold += gs.size();
    loc_pred += ps.size();
    for (const auto& sp : ps) loc_tp += gs.count(sp);
  }
  rep.exact = prf(tp, n_pred, n_gold);
  rep.locating = prf(loc_tp, loc_pred, loc_gold);
  rep.typing_accuracy = located ? static_cast<double>(typed_right) / static_cast<double>(located) : 0.0;
  for (std::size_t t = 0; t < types; ++t) rep.per_type.push_back(prf(t_tp[t], t_pred[t], t_gold[t]));
  rep.gold_entities = n_gold;
  rep.predicted_entities = n_pred;
  return rep;
}

// Decoded entities for every instance (one encoder pass each).
template <class T>
std::vector<std::vector<Entity>> predict_all(Model<T>& model, const std::vector<Instance>& data,
                                             DecodeOptions opts = {}) {
  std::vector<std::vector<Entity>> out;
  out.reserve(data.size());
  for (const auto& inst : data) out.push_back(decode_entities(model.predict(inst.words), opts));
  return out;
}

template <class T>
EvalReport evaluate(Model<T>& model, const std::vector<Instance>& data, DecodeOptions opts = {}) {
  std::vector<std::vector<Entity>> gold;
  gold.reserve(data.size());
  for (const auto& inst : data) gold.push_back(inst.gold);
  return evaluate(gold, predict_all(model, data, opts), model.config().types);
}

enum class SweepAxis { kPrompts, kInteractionLayers };

struct SweepPoint {
  std::size_t value = 0;
  EvalReport report;
};

// Trains and evaluates one model per value of the swept hyperparameter.
template <class T>
std::vector<SweepPoint> run_sweep(SweepAxis axis, const std::vector<std::size_t>& values,
                                  const ModelConfig& base, const TrainConfig& train_cfg,
                                  const Corpus& train, const Corpus& test,
                                  const std::function<void(const SweepPoint&)>& on_point = {}) {
  std::vector<SweepPoint> out;
  for (std::size_t v : values) {
    ModelConfig cfg = base;
    if (axis == SweepAxis::kPrompts) cfg.prompts = v;
    else cfg.interaction_layers = v;
    Vocab vocab(cfg.prompts);
    for (const auto& r : train.records)
      for (const auto& w : r.tokens) vocab.add_word(w);
    Model<T> model(cfg, vocab, init_params<T>(cfg, vocab.size(), train_cfg.seed));
    // Sentences with more entities than prompts cannot be supervised; they
    // are dropped from training and kept in evaluation, where they cap recall.
    Corpus fit = train;
    std::erase_if(fit.records, [&](const CorpusRecord& r) { return r.entities.size() > cfg.prompts; });
    const auto data = make_instances(fit, cfg.prompts);
    Trainer<T> trainer(model, train_cfg, Trainer<T>::steps_for(data.size(), train_cfg));
    trainer.fit(data);
    Corpus eval = test;
    std::vector<Instance> eval_data;
    for (std::size_t i = 0; i < eval.size(); ++i) {
      eval_data.push_back({eval.records[i].id, eval.records[i].tokens, eval.entities(i)});
    }
    SweepPoint p{v, evaluate(model, eval_data)};
    if (on_point) on_point(p);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace slotner
