#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "slotner/entity.hpp"
#include "slotner/nn/array.hpp"

namespace slotner {

class CorpusError : public Error {
 public:
  CorpusError(const std::string& msg, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Inclusive, 1-based word span. A missing type marks a position-only
// annotation.
struct SpanLabel {
  std::size_t start = 0;
  std::size_t end = 0;
  std::optional<std::string> type;

  auto operator<=>(const SpanLabel&) const = default;
};

struct CorpusRecord {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<SpanLabel> entities;

  bool operator==(const CorpusRecord&) const = default;
};

// Records plus the declared type inventory. The inventory order fixes the
// type ids; the null class follows the last type.
struct Corpus {
  std::vector<std::string> types;
  std::vector<CorpusRecord> records;

  bool operator==(const Corpus&) const = default;

  std::size_t size() const { return records.size(); }

  std::int32_t type_id(const std::string& name) const {
    auto it = std::find(types.begin(), types.end(), name);
    if (it == types.end()) throw Error("unknown entity type '" + name + "'");
    return static_cast<std::int32_t>(it - types.begin());
  }

  // Entities of one record as model labels.
  std::vector<Entity> entities(std::size_t i) const {
    std::vector<Entity> out;
    for (const auto& e : records.at(i).entities) {
      out.push_back(e.type ? Entity{e.start, e.end, type_id(*e.type)} : Entity::untyped(e.start, e.end));
    }
    return out;
  }

  std::size_t max_entities() const {
    std::size_t m = 0;
    for (const auto& r : records) m = std::max(m, r.entities.size());
    return m;
  }
};

// Checks the record invariants against a type inventory; `line` is used
// only for the error message.
inline void validate_record(const CorpusRecord& r, const std::vector<std::string>& types,
                            std::size_t line = 0) {
  if (r.tokens.empty()) throw CorpusError("record has no tokens", line);
  std::set<std::tuple<std::size_t, std::size_t, std::string>> seen;
  for (const auto& e : r.entities) {
    if (e.start < 1 || e.start > e.end || e.end > r.tokens.size()) {
      throw CorpusError("entity span (" + std::to_string(e.start) + ", " + std::to_string(e.end) +
                            ") outside 1.." + std::to_string(r.tokens.size()),
                        line);
    }
    if (e.type && std::find(types.begin(), types.end(), *e.type) == types.end()) {
      throw CorpusError("entity type '" + *e.type + "' not in the declared inventory", line);
    }
    if (!seen.emplace(e.start, e.end, e.type.value_or("")).second) {
      throw CorpusError("duplicate entity (" + std::to_string(e.start) + ", " +
                            std::to_string(e.end) + ", " + e.type.value_or("<untyped>") + ")",
                        line);
    }
  }
}

inline nlohmann::json record_to_json(const CorpusRecord& r) {
  nlohmann::json j;
  if (!r.id.empty()) j["id"] = r.id;
  j["tokens"] = r.tokens;
  j["entities"] = nlohmann::json::array();
  for (const auto& e : r.entities) {
    nlohmann::json je{{"start", e.start}, {"end", e.end}};
    if (e.type) je["type"] = *e.type;
    j["entities"].push_back(std::move(je));
  }
  return j;
}

inline CorpusRecord record_from_json(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw CorpusError("record is not an object", line);
  CorpusRecord r;
  try {
    if (j.contains("id")) r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    r.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (j.contains("entities")) {
      for (const auto& je : j.at("entities")) {
        SpanLabel e;
        e.start = je.at("start").get<std::size_t>();
        e.end = je.at("end").get<std::size_t>();
        if (je.contains("type") && !je.at("type").is_null()) e.type = je.at("type").get<std::string>();
        r.entities.push_back(std::move(e));
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw CorpusError(std::string("malformed record: ") + ex.what(), line);
  }
  return r;
}

// Line-delimited JSON: a header {"types": [...]} then one record per line.
inline void write_corpus(std::ostream& out, const Corpus& c) {
  out << nlohmann::json{{"types", c.types}}.dump() << '\n';
  for (const auto& r : c.records) out << record_to_json(r).dump() << '\n';
}

inline void save_corpus(const std::string& path, const Corpus& c) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus file " + path);
  write_corpus(out, c);
}

inline Corpus read_corpus(std::istream& in) {
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
      throw CorpusError(std::string("malformed line: ") + ex.what(), lineno);
    }
    if (!header) {
      header = true;
      if (j.is_object() && j.contains("types")) {
        try {
          c.types = j.at("types").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& ex) {
          throw CorpusError(std::string("malformed type header: ") + ex.what(), lineno);
        }
        continue;
      }
      throw CorpusError("first line must declare the type inventory {\"types\": [...]}", lineno);
    }
    CorpusRecord r = record_from_json(j, lineno);
    validate_record(r, c.types, lineno);
    c.records.push_back(std::move(r));
  }
  return c;
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file " + path);
  return read_corpus(in);
}

// Whitespace tokenization of one sentence per line.
inline std::vector<std::vector<std::string>> read_sentences(std::istream& in) {
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<std::string> words;
    for (std::string w; ss >> w;) words.push_back(w);
    if (!words.empty()) out.push_back(std::move(words));
  }
  return out;
}

}  // namespace slotner
