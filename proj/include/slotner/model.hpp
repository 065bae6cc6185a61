#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "slotner/entity.hpp"
#include "slotner/nn/graph.hpp"
#include "slotner/prompt_template.hpp"

namespace slotner {

struct ModelConfig {
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t interaction_layers = 3;
  std::size_t prompts = 12;
  std::size_t types = 3;  // C, excluding the null class
  std::size_t max_len = 256;
  std::size_t ffn = 256;
  TemplateKind template_kind = TemplateKind::kDefault;
  bool prompt_mask = true;

  void validate() const {
    if (hidden == 0 || heads == 0 || hidden % heads != 0) {
      throw Error("ModelConfig: heads (" + std::to_string(heads) +
                  ") must divide hidden size (" + std::to_string(hidden) + ")");
    }
    if (prompts == 0) throw Error("ModelConfig: prompts must be >= 1");
    if (types == 0) throw Error("ModelConfig: at least one entity type is required");
    if (ffn == 0) throw Error("ModelConfig: ffn width must be >= 1");
  }
};

template <class T>
struct Linear {
  nn::Parameter<T> weight;  // [in x out]
  nn::Parameter<T> bias;    // [1 x out]
};

template <class T>
struct Norm {
  nn::Parameter<T> gain;
  nn::Parameter<T> shift;
};

// The key projection has no bias: softmax is invariant to it.
template <class T>
struct AttentionProj {
  Linear<T> query;
  nn::Parameter<T> key;
  Linear<T> value, output;
};

template <class T>
struct EncoderBlock {
  AttentionProj<T> attention;
  Norm<T> attention_norm;
  Linear<T> ffn_in, ffn_out;
  Norm<T> ffn_norm;
};

// Slot self-attention followed by slot-to-sentence cross-attention.
template <class T>
struct InteractionBlock {
  AttentionProj<T> self_attention;
  Norm<T> self_norm;
  AttentionProj<T> cross_attention;
  Norm<T> cross_norm;
};

// H^F = W1 h_slot + W2 H^X; p = sigmoid(w3 . tanh(H^F) + b3).
template <class T>
struct BoundaryHead {
  Linear<T> slot;           // W1 with bias
  nn::Parameter<T> word;    // W2 [h x h]
  Linear<T> score;          // w3 [h x 1]
};

template <class T>
struct ModelParams {
  nn::Parameter<T> token_embedding;     // [V x h]
  nn::Parameter<T> position_embedding;  // [max_len x h], sentence side only
  Norm<T> embedding_norm;
  std::vector<EncoderBlock<T>> encoder;
  nn::Parameter<T> identity;            // E_id [M x h]
  std::vector<InteractionBlock<T>> position_interaction;
  std::vector<InteractionBlock<T>> type_interaction;
  Linear<T> classifier;                 // [h x (C+1)]
  BoundaryHead<T> left, right;

  // Calls f(name, parameter) for every learnable array in a fixed order.
  template <class F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <class F>
  void visit(F&& f) const { visit_impl(*this, f); }

  // Parameters of the sentence encoder (embeddings and encoder blocks).
  template <class F>
  void visit_encoder(F&& f) {
    visit([&](const std::string& name, nn::Parameter<T>& p) {
      if (name.rfind("embedding.", 0) == 0 || name.rfind("encoder.", 0) == 0) f(name, p);
    });
  }

  std::vector<nn::Parameter<T>*> all() {
    std::vector<nn::Parameter<T>*> out;
    visit([&](const std::string&, nn::Parameter<T>& p) { out.push_back(&p); });
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const nn::Parameter<T>& p) { n += p.value.size(); });
    return n;
  }

  void zero_grad() {
    visit([](const std::string&, nn::Parameter<T>& p) { p.zero_grad(); });
  }

  void set_encoder_trainable(bool trainable) {
    visit_encoder([&](const std::string&, nn::Parameter<T>& p) { p.trainable = trainable; });
  }

  template <class U>
  ModelParams<U> cast() const;

 private:
  template <class Self, class F>
  static void visit_impl(Self& s, F& f) {
    auto linear = [&](const std::string& n, auto& l) {
      f(n + ".w", l.weight);
      f(n + ".b", l.bias);
    };
    auto norm = [&](const std::string& n, auto& l) {
      f(n + ".gain", l.gain);
      f(n + ".shift", l.shift);
    };
    auto attn = [&](const std::string& n, auto& a) {
      linear(n + ".q", a.query);
      f(n + ".k.w", a.key);
      linear(n + ".v", a.value);
      linear(n + ".o", a.output);
    };
    f(std::string("embedding.token"), s.token_embedding);
    f(std::string("embedding.position"), s.position_embedding);
    norm("embedding.norm", s.embedding_norm);
    for (std::size_t i = 0; i < s.encoder.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      attn(p + ".attn", s.encoder[i].attention);
      norm(p + ".attn_norm", s.encoder[i].attention_norm);
      linear(p + ".ffn_in", s.encoder[i].ffn_in);
      linear(p + ".ffn_out", s.encoder[i].ffn_out);
      norm(p + ".ffn_norm", s.encoder[i].ffn_norm);
    }
    f(std::string("prompt.identity"), s.identity);
    auto interaction = [&](const std::string& n, auto& blocks) {
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = n + "." + std::to_string(i);
        attn(p + ".self", blocks[i].self_attention);
        norm(p + ".self_norm", blocks[i].self_norm);
        attn(p + ".cross", blocks[i].cross_attention);
        norm(p + ".cross_norm", blocks[i].cross_norm);
      }
    };
    interaction("interaction.position", s.position_interaction);
    interaction("interaction.type", s.type_interaction);
    linear("head.classifier", s.classifier);
    for (auto* side : {&s.left, &s.right}) {
      const std::string p = side == &s.left ? "head.left" : "head.right";
      linear(p + ".slot", side->slot);
      f(p + ".word", side->word);
      linear(p + ".score", side->score);
    }
  }
};

namespace detail {

template <class T>
struct Initializer {
  std::mt19937_64& rng;

  nn::Array<T> truncated_normal(nn::Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    nn::Array<T> a(std::move(shape));
    for (auto& v : a.data) {
      double x;
      do {
        x = dist(rng);
      } while (std::abs(x) > 2.0 * stddev);
      v = static_cast<T>(x);
    }
    return a;
  }
  Linear<T> linear(std::size_t in, std::size_t out) {
    return {nn::Parameter<T>(truncated_normal({in, out}, 0.02)), nn::Parameter<T>(nn::Array<T>({1, out}))};
  }
  nn::Array<T> xavier(std::size_t in, std::size_t out) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in + out)));
    nn::Array<T> a({in, out});
    for (auto& v : a.data) v = static_cast<T>(dist(rng));
    return a;
  }
  Norm<T> norm(std::size_t h) {
    return {nn::Parameter<T>(nn::Array<T>({1, h}, T{1})), nn::Parameter<T>(nn::Array<T>({1, h}))};
  }
  AttentionProj<T> attention(std::size_t h) {
    return {linear(h, h), nn::Parameter<T>(truncated_normal({h, h}, 0.02)), linear(h, h), linear(h, h)};
  }
};

}  // namespace detail

// E_id ~ N(0, 0.02); other weights truncated normal (std 0.02, cut at 2
// std); biases zero; normalization gains one. The boundary heads use Xavier
// normal weights instead: at std 0.02 the tanh stays linear and every slot
// produces the same boundary scores.
template <class T>
nn::Array<T> init_identity_embeddings(std::size_t prompts, std::size_t hidden,
                                      std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 0.02);
  nn::Array<T> a({prompts, hidden});
  for (auto& v : a.data) v = static_cast<T>(dist(rng));
  return a;
}

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  detail::Initializer<T> init{rng};
  const std::size_t h = cfg.hidden;
  ModelParams<T> p;
  p.token_embedding = nn::Parameter<T>(init.truncated_normal({vocab_size, h}, 0.02));
  p.position_embedding = nn::Parameter<T>(init.truncated_normal({cfg.max_len, h}, 0.02));
  p.embedding_norm = init.norm(h);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    EncoderBlock<T> b;
    b.attention = init.attention(h);
    b.attention_norm = init.norm(h);
    b.ffn_in = init.linear(h, cfg.ffn);
    b.ffn_out = init.linear(cfg.ffn, h);
    b.ffn_norm = init.norm(h);
    p.encoder.push_back(std::move(b));
  }
  p.identity = nn::Parameter<T>(init_identity_embeddings<T>(cfg.prompts, h, rng));
  for (auto* blocks : {&p.position_interaction, &p.type_interaction}) {
    for (std::size_t i = 0; i < cfg.interaction_layers; ++i) {
      blocks->push_back({init.attention(h), init.norm(h), init.attention(h), init.norm(h)});
    }
  }
  p.classifier = init.linear(h, cfg.types + 1);
  for (auto* side : {&p.left, &p.right}) {
    side->slot = {nn::Parameter<T>(init.xavier(h, h)), nn::Parameter<T>(nn::Array<T>({1, h}))};
    side->word = nn::Parameter<T>(init.xavier(h, h));
    side->score = {nn::Parameter<T>(init.xavier(h, 1)), nn::Parameter<T>(nn::Array<T>({1, 1}))};
  }
  return p;
}

template <class T>
template <class U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  // Same structure, then copy values in visit order.
  auto shape_like = [](const nn::Parameter<T>& p) {
    nn::Parameter<U> q(p.value.template cast<U>());
    q.trainable = p.trainable;
    return q;
  };
  std::vector<const nn::Parameter<T>*> src;
  visit([&](const std::string&, const nn::Parameter<T>& p) { src.push_back(&p); });
  out.encoder.resize(encoder.size());
  out.position_interaction.resize(position_interaction.size());
  out.type_interaction.resize(type_interaction.size());
  std::size_t i = 0;
  out.visit([&](const std::string&, nn::Parameter<U>& p) { p = shape_like(*src[i++]); });
  return out;
}

// Graph handles produced by one forward pass.
struct ForwardVars {
  nn::Var sentence;       // H^X [N x h]
  nn::Var position_slots; // H^P [M x h]
  nn::Var type_slots;     // H^T [M x h]
  nn::Var position_final; // \hat H^P
  nn::Var type_final;     // \hat H^T
  nn::Var type_logits;    // [M x (C+1)]
  nn::Var left_logits;    // [M x N]
  nn::Var right_logits;   // [M x N]
};

// Encoder, prompt interaction and decoding heads over one prompted sentence.
template <class T>
class Model {
 public:
  Model(ModelConfig cfg, Vocab vocab, ModelParams<T> params)
      : config_(std::move(cfg)), vocab_(std::move(vocab)), params_(std::move(params)) {
    config_.validate();
    if (vocab_.prompt_slots() < config_.prompts) {
      throw Error("Model: vocab reserves " + std::to_string(vocab_.prompt_slots()) +
                  " prompt slots, config needs " + std::to_string(config_.prompts));
    }
  }
  Model(const Model& o)
      : config_(o.config_), vocab_(o.vocab_), params_(o.params_), encode_calls_(o.encode_calls()) {}

  const ModelConfig& config() const { return config_; }
  ModelConfig& config() { return config_; }
  const Vocab& vocab() const { return vocab_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }

  // Number of encoder passes run so far (instrumentation).
  std::size_t encode_calls() const { return encode_calls_.load(); }

  PromptedSequence prompted(const std::vector<std::string>& words) const {
    return build_input(words, config_.prompts, config_.template_kind, vocab_, config_.max_len);
  }

  // Runs the encoder on the full prompted sequence and splits its output
  // into sentence, position-slot and type-slot encodings.
  std::tuple<nn::Var, nn::Var, nn::Var> encode(nn::Graph<T>& g, const PromptedSequence& seq) {
    if (seq.length() > config_.max_len) throw SequenceTooLong(seq.length(), config_.max_len);
    if (seq.prompts() != config_.prompts) {
      throw Error("encode: sequence has " + std::to_string(seq.prompts()) +
                  " prompts, model expects " + std::to_string(config_.prompts));
    }
    ++encode_calls_;
    auto& p = params_;
    const std::size_t k = seq.prompt_length;
    std::vector<std::size_t> prompt_ids(seq.token_ids.begin(), seq.token_ids.begin() + k);
    std::vector<std::size_t> sentence_ids(seq.token_ids.begin() + k, seq.token_ids.end());
    std::vector<std::size_t> positions(sentence_ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;

    nn::Var table = g.param(p.token_embedding);
    nn::Var sent = g.add(g.embedding(table, sentence_ids),
                         g.embedding(g.param(p.position_embedding), positions));
    nn::Var x = k > 0 ? g.concat_rows(g.embedding(table, prompt_ids), sent) : sent;
    x = norm(g, x, p.embedding_norm);

    nn::AttentionMask mask;
    const bool masked = config_.prompt_mask && k > 0;
    if (masked) mask = build_prompt_agnostic_mask(seq.word_count, k);
    for (auto& block : p.encoder) {
      nn::Var a = attend(g, x, x, block.attention, masked ? &mask : nullptr);
      x = norm(g, g.add(x, a), block.attention_norm);
      nn::Var f = linear(g, g.gelu(linear(g, x, block.ffn_in)), block.ffn_out);
      x = norm(g, g.add(x, f), block.ffn_norm);
    }
    std::vector<std::size_t> word_rows(seq.word_count);
    for (std::size_t i = 0; i < word_rows.size(); ++i) word_rows[i] = seq.sentence_start + i;
    return {g.gather_rows(x, word_rows), g.gather_rows(x, seq.position_slot_index),
            g.gather_rows(x, seq.type_slot_index)};
  }

  // (H^delta + E_id) through the interaction blocks of one slot kind.
  nn::Var interact(nn::Graph<T>& g, nn::Var slots, nn::Var sentence,
                   std::vector<InteractionBlock<T>>& blocks) {
    nn::Var x = g.add(slots, g.param(params_.identity));
    for (auto& b : blocks) {
      x = norm(g, g.add(x, attend(g, x, x, b.self_attention, nullptr)), b.self_norm);
      x = norm(g, g.add(x, attend(g, x, sentence, b.cross_attention, nullptr)), b.cross_norm);
    }
    return x;
  }

  nn::Var type_logits(nn::Graph<T>& g, nn::Var type_final) {
    return linear(g, type_final, params_.classifier);
  }

  nn::Var boundary_logits(nn::Graph<T>& g, nn::Var position_final, nn::Var sentence,
                          BoundaryHead<T>& head) {
    const std::size_t m = g.value(position_final).rows();
    const std::size_t n = g.value(sentence).rows();
    nn::Var slot = linear(g, position_final, head.slot);
    nn::Var word = g.matmul(sentence, g.param(head.word));
    nn::Var fused = g.tanh(g.pairwise_add(slot, word));
    return g.reshape(linear(g, fused, head.score), {m, n});
  }

  ForwardVars forward(nn::Graph<T>& g, const PromptedSequence& seq) {
    ForwardVars f;
    std::tie(f.sentence, f.position_slots, f.type_slots) = encode(g, seq);
    f.position_final = interact(g, f.position_slots, f.sentence, params_.position_interaction);
    f.type_final = interact(g, f.type_slots, f.sentence, params_.type_interaction);
    f.type_logits = type_logits(g, f.type_final);
    f.left_logits = boundary_logits(g, f.position_final, f.sentence, params_.left);
    f.right_logits = boundary_logits(g, f.position_final, f.sentence, params_.right);
    return f;
  }

  static PredictionSet predictions(const nn::Graph<T>& g, const ForwardVars& f) {
    PredictionSet out;
    out.type_probs = g.value(f.type_logits).template cast<double>();
    for (std::size_t r = 0; r < out.type_probs.rows(); ++r) {
      nn::kernel::softmax_row(out.type_probs.row(r), out.type_probs.cols());
    }
    auto sig = [](nn::Array<double> a) {
      for (auto& v : a.data) v = nn::Graph<double>::sigmoid_value(v);
      return a;
    };
    out.left_probs = sig(g.value(f.left_logits).template cast<double>());
    out.right_probs = sig(g.value(f.right_logits).template cast<double>());
    return out;
  }

  // One forward pass over the prompted sentence.
  PredictionSet predict(const std::vector<std::string>& words) {
    nn::Graph<T> g;
    auto f = forward(g, prompted(words));
    return predictions(g, f);
  }

 private:
  nn::Var linear(nn::Graph<T>& g, nn::Var x, Linear<T>& l) {
    return g.add_row(g.matmul(x, g.param(l.weight)), g.param(l.bias));
  }
  nn::Var norm(nn::Graph<T>& g, nn::Var x, Norm<T>& n) {
    return g.layer_norm(x, g.param(n.gain), g.param(n.shift));
  }
  nn::Var attend(nn::Graph<T>& g, nn::Var queries, nn::Var memory, AttentionProj<T>& a,
                 const nn::AttentionMask* mask) {
    nn::Var q = linear(g, queries, a.query);
    nn::Var k = g.matmul(memory, g.param(a.key));
    nn::Var v = linear(g, memory, a.value);
    return linear(g, g.attention(q, k, v, config_.heads, mask), a.output);
  }

  ModelConfig config_;
  Vocab vocab_;
  ModelParams<T> params_;
  std::atomic<std::size_t> encode_calls_{0};
};

struct DecodeOptions {
  // Emit every prompt's span regardless of the type head (locate-only
  // models); emitted entities are untyped.
  bool ignore_type = false;
};

// Per prompt (argmax p^l, argmax p^r, argmax p^t); null-typed prompts and
// spans with l > r are dropped, and among candidates sharing (l, r) the one
// with the highest p^t * p^l * p^r survives (exact duplicates collapse).
// Output is sorted by (left, right, type).
inline std::vector<Entity> decode_entities(const PredictionSet& pred, DecodeOptions opts = {}) {
  auto argmax = [](const double* row, std::size_t n) {
    return static_cast<std::size_t>(std::max_element(row, row + n) - row);
  };
  struct Candidate {
    Entity entity;
    double score;
  };
  std::map<std::pair<std::size_t, std::size_t>, Candidate> best;
  const std::size_t n = pred.words();
  for (std::size_t i = 0; i < pred.prompts(); ++i) {
    const std::size_t t = argmax(pred.type_probs.row(i), pred.classes());
    if (!opts.ignore_type && t == pred.null_class()) continue;
    const std::size_t l = argmax(pred.left_probs.row(i), n);
    const std::size_t r = argmax(pred.right_probs.row(i), n);
    if (l > r) continue;
    double score = pred.left_probs(i, l) * pred.right_probs(i, r);
    Entity e{l + 1, r + 1, opts.ignore_type ? Entity::kUntyped : static_cast<std::int32_t>(t)};
    if (!opts.ignore_type) score *= pred.type_probs(i, t);
    auto key = std::make_pair(e.left, e.right);
    auto it = best.find(key);
    if (it == best.end() || score > it->second.score ||
        (score == it->second.score && e.type < it->second.entity.type)) {
      best[key] = Candidate{e, score};
    }
  }
  std::vector<Entity> out;
  out.reserve(best.size());
  for (const auto& [key, c] : best) out.push_back(c.entity);
  return out;
}

}  // namespace slotner
