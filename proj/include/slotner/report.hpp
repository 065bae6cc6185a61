#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "slotner/dataset.hpp"
#include "slotner/pipeline.hpp"

namespace slotner {

inline nlohmann::json prf_to_json(const PRF& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r, const std::vector<std::string>& types) {
  nlohmann::ordered_json j;
  j["precision"] = r.exact.precision;
  j["recall"] = r.exact.recall;
  j["f1"] = r.exact.f1;
  j["locating"] = prf_to_json(r.locating);
  j["typing_accuracy"] = r.typing_accuracy;
  nlohmann::ordered_json per_type = nlohmann::ordered_json::object();
  for (std::size_t t = 0; t < r.per_type.size(); ++t) {
    per_type[t < types.size() ? types[t] : synth_type_name(t)] = prf_to_json(r.per_type[t]);
  }
  j["per_type"] = per_type;
  j["gold_entities"] = r.gold_entities;
  j["predicted_entities"] = r.predicted_entities;
  return j;
}

inline nlohmann::ordered_json stats_to_json(const CorpusStats& s) {
  nlohmann::ordered_json j;
  j["#S"] = s.sentences;
  j["#NS"] = s.nested_sentences;
  j["#E"] = s.entities;
  j["#NE"] = s.nested_entities;
  j["NR"] = s.nesting_rate;
  j["AL"] = s.average_length;
  j["#ME"] = s.max_entities;
  j["#AE"] = s.average_entities;
  return j;
}

// Model output in the corpus serialization.
inline CorpusRecord prediction_record(const std::string& id, const std::vector<std::string>& words,
                                      const std::vector<Entity>& entities,
                                      const std::vector<std::string>& types) {
  CorpusRecord r;
  r.id = id;
  r.tokens = words;
  for (const auto& e : entities) {
    SpanLabel s{e.left, e.right, std::nullopt};
    if (e.has_type()) s.type = types.at(static_cast<std::size_t>(e.type));
    r.entities.push_back(std::move(s));
  }
  return r;
}

}  // namespace slotner
