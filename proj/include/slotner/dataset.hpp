#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "slotner/corpus.hpp"

namespace slotner {

// Parameters of the synthetic nested-NER corpus. Each entity type owns a
// small lexicon of words; an entity is a run of its type's words, and a
// nested pair is an outer run of one type wrapping an inner run of another.
// Top-level entities are always separated by filler words.
struct SynthSpec {
  std::size_t sentences = 1000;
  std::size_t filler_words = 200;
  std::size_t lexicon_size = 30;  // words per entity type
  std::size_t types = 3;
  std::size_t min_length = 8;
  std::size_t max_length = 20;
  double entity_density = 0.35;   // target fraction of words inside top-level entities
  double nesting_probability = 0.3;
  std::size_t max_entities = 6;
  bool position_only = false;     // drop type names (locate-only data)
  std::uint64_t seed = 0;

  void validate() const {
    if (types == 0) throw Error("SynthSpec: types must be >= 1");
    if (min_length == 0 || min_length > max_length) throw Error("SynthSpec: invalid length range");
    if (entity_density < 0.0 || entity_density > 1.0) throw Error("SynthSpec: density outside [0, 1]");
    if (nesting_probability < 0.0 || nesting_probability > 1.0) {
      throw Error("SynthSpec: nesting probability outside [0, 1]");
    }
    if (nesting_probability > 0.0 && types < 2) {
      throw Error("SynthSpec: nesting needs at least two entity types");
    }
    if (max_entities == 0) throw Error("SynthSpec: max_entities must be >= 1");
  }
};

inline std::string synth_type_name(std::size_t t) { return "T" + std::to_string(t); }

inline Corpus synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto uniform = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };
  auto filler = [&] { return "w" + std::to_string(uniform(0, spec.filler_words - 1)); };
  auto entity_word = [&](std::size_t type) {
    return "e" + std::to_string(type) + "_" + std::to_string(uniform(0, spec.lexicon_size - 1));
  };

  Corpus c;
  for (std::size_t t = 0; t < spec.types; ++t) c.types.push_back(synth_type_name(t));
  // A flat entity spans 1-3 words (mean 2); start probability is set so
  // that the expected covered fraction approaches entity_density.
  const double start_p = std::min(1.0, spec.entity_density / (2.0 * (1.0 - spec.entity_density) + 1e-9));

  for (std::size_t s = 0; s < spec.sentences; ++s) {
    CorpusRecord r;
    r.id = "synth-" + std::to_string(spec.seed) + "-" + std::to_string(s);
    const std::size_t length = uniform(spec.min_length, spec.max_length);
    std::vector<SpanLabel> spans;
    std::size_t top_end = 0;  // end of the last top-level entity
    auto label = [&](std::size_t start, std::size_t end, std::size_t type) {
      SpanLabel e{start, end, std::nullopt};
      if (!spec.position_only) e.type = synth_type_name(type);
      spans.push_back(e);
    };
    while (r.tokens.size() < length) {
      const std::size_t room = length - r.tokens.size();
      const bool after_entity = !spans.empty() && top_end == r.tokens.size();
      if (after_entity || !coin(start_p) || spans.size() >= spec.max_entities) {
        r.tokens.push_back(filler());
        continue;
      }
      const std::size_t type = uniform(0, spec.types - 1);
      const std::size_t start = r.tokens.size() + 1;
      if (room >= 3 && spans.size() + 2 <= spec.max_entities && coin(spec.nesting_probability)) {
        // Outer run of `type` around an inner run of another type.
        std::size_t inner_type = uniform(0, spec.types - 2);
        if (inner_type >= type) ++inner_type;
        const std::size_t lead = uniform(1, std::min<std::size_t>(2, room - 2));
        const std::size_t inner_len = uniform(1, std::min<std::size_t>(2, room - lead));
        const std::size_t trail = room - lead - inner_len > 0 ? uniform(0, 1) : 0;
        for (std::size_t i = 0; i < lead; ++i) r.tokens.push_back(entity_word(type));
        const std::size_t inner_start = r.tokens.size() + 1;
        for (std::size_t i = 0; i < inner_len; ++i) r.tokens.push_back(entity_word(inner_type));
        const std::size_t inner_end = r.tokens.size();
        for (std::size_t i = 0; i < trail; ++i) r.tokens.push_back(entity_word(type));
        label(start, r.tokens.size(), type);
        label(inner_start, inner_end, inner_type);
        top_end = r.tokens.size();
      } else {
        const std::size_t len = uniform(1, std::min<std::size_t>(3, room));
        for (std::size_t i = 0; i < len; ++i) r.tokens.push_back(entity_word(type));
        label(start, r.tokens.size(), type);
        top_end = r.tokens.size();
      }
    }
    r.entities = std::move(spans);
    c.records.push_back(std::move(r));
  }
  return c;
}

struct CorpusStats {
  std::size_t sentences = 0;          // #S
  std::size_t nested_sentences = 0;   // #NS
  std::size_t entities = 0;           // #E
  std::size_t nested_entities = 0;    // #NE
  double nesting_rate = 0.0;          // NR, percent
  double average_length = 0.0;        // AL
  std::size_t max_entities = 0;       // #ME
  double average_entities = 0.0;      // #AE
};

// A span is nested when it properly contains, or is properly contained in,
// another entity span of the same sentence.
inline bool properly_contains(const SpanLabel& outer, const SpanLabel& inner) {
  return outer.start <= inner.start && inner.end <= outer.end &&
         (outer.start != inner.start || outer.end != inner.end);
}

inline CorpusStats corpus_stats(const Corpus& c) {
  CorpusStats s;
  s.sentences = c.records.size();
  std::size_t words = 0;
  for (const auto& r : c.records) {
    words += r.tokens.size();
    s.entities += r.entities.size();
    s.max_entities = std::max(s.max_entities, r.entities.size());
    std::size_t nested = 0;
    for (std::size_t i = 0; i < r.entities.size(); ++i) {
      const auto& a = r.entities[i];
      const bool is_nested = std::any_of(r.entities.begin(), r.entities.end(), [&](const SpanLabel& b) {
        return properly_contains(a, b) || properly_contains(b, a);
      });
      nested += is_nested;
    }
    s.nested_entities += nested;
    s.nested_sentences += nested > 0;
  }
  if (s.entities) s.nesting_rate = 100.0 * static_cast<double>(s.nested_entities) / static_cast<double>(s.entities);
  if (s.sentences) {
    s.average_length = static_cast<double>(words) / static_cast<double>(s.sentences);
    s.average_entities = static_cast<double>(s.entities) / static_cast<double>(s.sentences);
  }
  return s;
}

}  // namespace slotner
