#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "slotner/model.hpp"
#include "slotner/pipeline.hpp"

namespace slotner {

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Model and training settings together; this is what a config file holds.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto size_field = [&t](const char* key, auto member) {
      t.push_back({key, {[key, member](RunConfig& c, const std::string& v) {
                           member(c) = parse_number<std::size_t>(key, v);
                         },
                         [member](const RunConfig& c) {
                           return std::to_string(member(c));
                         }}});
    };
    auto double_field = [&t](const char* key, auto member) {
      t.push_back({key, {[key, member](RunConfig& c, const std::string& v) {
                           member(c) = parse_number<double>(key, v);
                         },
                         [member](const RunConfig& c) {
                           return format_double(member(c));
                         }}});
    };
    auto bool_field = [&t](const char* key, auto member) {
      t.push_back({key, {[key, member](RunConfig& c, const std::string& v) {
                           member(c) = parse_bool(key, v);
                         },
                         [member](const RunConfig& c) {
                           return std::string(member(c) ? "true" : "false");
                         }}});
    };
    size_field("hidden", [](auto& c) -> auto& { return c.model.hidden; });
    size_field("layers", [](auto& c) -> auto& { return c.model.layers; });
    size_field("heads", [](auto& c) -> auto& { return c.model.heads; });
    size_field("interaction_layers", [](auto& c) -> auto& { return c.model.interaction_layers; });
    size_field("prompts", [](auto& c) -> auto& { return c.model.prompts; });
    size_field("types", [](auto& c) -> auto& { return c.model.types; });
    size_field("max_len", [](auto& c) -> auto& { return c.model.max_len; });
    size_field("ffn", [](auto& c) -> auto& { return c.model.ffn; });
    t.push_back({"template", {[](RunConfig& c, const std::string& v) {
                                try {
                                  c.model.template_kind = parse_template_kind(v);
                                } catch (const Error& e) {
                                  throw ConfigError(std::string("config key 'template': ") + e.what());
                                }
                              },
                              [](const RunConfig& c) { return to_string(c.model.template_kind); }}});
    bool_field("prompt_mask", [](auto& c) -> auto& { return c.model.prompt_mask; });

    double_field("learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; });
    double_field("warmup_fraction", [](auto& c) -> auto& { return c.train.warmup_fraction; });
    size_field("epochs", [](auto& c) -> auto& { return c.train.epochs; });
    size_field("batch_size", [](auto& c) -> auto& { return c.train.batch_size; });
    double_field("lambda1", [](auto& c) -> auto& { return c.train.lambda1; });
    double_field("lambda2", [](auto& c) -> auto& { return c.train.lambda2; });
    t.push_back({"seed", {[](RunConfig& c, const std::string& v) {
                            c.train.seed = parse_number<std::uint64_t>("seed", v);
                          },
                          [](const RunConfig& c) { return std::to_string(c.train.seed); }}});
    t.push_back({"mode", {[](RunConfig& c, const std::string& v) {
                            if (v == "full") c.train.mode = TrainMode::kFull;
                            else if (v == "locate_only") c.train.mode = TrainMode::kLocateOnly;
                            else throw ConfigError("config key 'mode': expected full or locate_only, got '" + v + "'");
                          },
                          [](const RunConfig& c) {
                            return std::string(c.train.mode == TrainMode::kFull ? "full" : "locate_only");
                          }}});
    bool_field("freeze_encoder", [](auto& c) -> auto& { return c.train.freeze_encoder; });
    t.push_back({"matching", {[](RunConfig& c, const std::string& v) {
                                if (v == "dynamic") c.train.matching = MatchingMode::kDynamic;
                                else if (v == "static") c.train.matching = MatchingMode::kStatic;
                                else throw ConfigError("config key 'matching': expected dynamic or static, got '" + v + "'");
                              },
                              [](const RunConfig& c) {
                                return std::string(c.train.matching == MatchingMode::kDynamic ? "dynamic" : "static");
                              }}});
    bool_field("label_expansion", [](auto& c) -> auto& { return c.train.label_expansion; });
    t.push_back({"locate_loss", {[](RunConfig& c, const std::string& v) {
                                   if (v == "bce") c.train.locate_loss = LocateLoss::kBce;
                                   else if (v == "gold") c.train.locate_loss = LocateLoss::kGold;
                                   else throw ConfigError("config key 'locate_loss': expected bce or gold, got '" + v + "'");
                                 },
                                 [](const RunConfig& c) {
                                   return std::string(c.train.locate_loss == LocateLoss::kBce ? "bce" : "gold");
                                 }}});
    double_field("grad_clip", [](auto& c) -> auto& { return c.train.grad_clip; });
    return t;
  }();
  return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : detail::fields()) out.push_back(k);
  return out;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [k, f] : detail::fields()) {
    if (k == key) {
      f.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) {
  for (const auto& [k, f] : detail::fields()) {
    if (k == key) return f.get(c);
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Named ablation switches: static filling, one-to-one matching, or the
// prompt-agnostic mask turned off.
inline void apply_ablation(RunConfig& c, const std::string& name) {
  if (name == "none" || name.empty()) return;
  if (name == "static") c.train.matching = MatchingMode::kStatic;
  else if (name == "one_to_one") c.train.label_expansion = false;
  else if (name == "no_mask") c.model.prompt_mask = false;
  else throw ConfigError("unknown ablation '" + name + "' (expected none, static, one_to_one, no_mask)");
}

// One `key = value` per line; '#' starts a comment. Keys not mentioned keep
// their defaults.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh) {
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key +
                        "' already set on line " + std::to_string(it->second));
    }
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.model.validate();
  base.train.validate();
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in, std::move(base));
}

inline std::string config_to_text(const RunConfig& c) {
  std::ostringstream out;
  for (const auto& [k, f] : detail::fields()) out << k << " = " << f.get(c) << '\n';
  return out.str();
}

}  // namespace slotner
