#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slotner/config.hpp"
#include "slotner/model.hpp"

namespace slotner {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline constexpr int kCheckpointVersion = 1;

// Everything needed to rebuild a trained model.
template <class T>
struct Checkpoint {
  RunConfig config;
  std::vector<std::string> types;
  Vocab vocab;
  ModelParams<T> params;

  Model<T> model() const { return Model<T>(config.model, vocab, params); }
};

// Layout:
//   slotner-checkpoint <version>
//   config <n>        followed by n `key = value` lines
//   types <n>         followed by n JSON strings
//   vocab <n>         followed by n JSON strings (word ids in order)
//   tensors <n>       followed by n lines `name rank d0 .. d{rank-1} offset`
//   payload <bytes>
//   <bytes of little-endian float32, concatenated in tensor order>
template <class T>
void write_checkpoint(std::ostream& out, const RunConfig& cfg, const std::vector<std::string>& types,
                      const Vocab& vocab, const ModelParams<T>& params) {
  out << "slotner-checkpoint " << kCheckpointVersion << '\n';
  const std::string cfg_text = config_to_text(cfg);
  out << "config " << std::count(cfg_text.begin(), cfg_text.end(), '\n') << '\n' << cfg_text;
  out << "types " << types.size() << '\n';
  for (const auto& t : types) out << nlohmann::json(t).dump() << '\n';
  out << "vocab " << vocab.words().size() << '\n';
  for (const auto& w : vocab.words()) out << nlohmann::json(w).dump() << '\n';

  std::size_t tensors = 0, offset = 0;
  std::ostringstream manifest;
  params.visit([&](const std::string& name, const nn::Parameter<T>& p) {
    manifest << name << ' ' << p.value.shape.size();
    for (auto d : p.value.shape) manifest << ' ' << d;
    manifest << ' ' << offset << '\n';
    offset += 4 * p.value.size();
    ++tensors;
  });
  out << "tensors " << tensors << '\n' << manifest.str();
  out << "payload " << offset << '\n';
  std::vector<char> bytes;
  bytes.reserve(offset);
  params.visit([&](const std::string&, const nn::Parameter<T>& p) {
    for (T v : p.value.data) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  });
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint write failed");
}

template <class T>
void save_checkpoint(const std::string& path, const RunConfig& cfg, const std::vector<std::string>& types,
                     const Vocab& vocab, const ModelParams<T>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  write_checkpoint(out, cfg, types, vocab, params);
}

namespace detail {

inline std::string expect_section(std::istream& in, const std::string& name, std::size_t& count) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("checkpoint truncated before '" + name + "'");
  std::istringstream ss(line);
  std::string got;
  if (!(ss >> got >> count) || got != name) {
    throw CheckpointError("checkpoint: expected '" + name + " <count>', got '" + line + "'");
  }
  return line;
}

inline std::string json_line(std::istream& in, const std::string& section) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("checkpoint truncated in '" + section + "'");
  try {
    return nlohmann::json::parse(line).get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw CheckpointError("checkpoint: malformed entry in '" + section + "': " + line);
  }
}

}  // namespace detail

template <class T>
Checkpoint<T> read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("empty checkpoint");
  {
    std::istringstream ss(line);
    std::string magic;
    int version = 0;
    if (!(ss >> magic >> version) || magic != "slotner-checkpoint") {
      throw CheckpointError("not a checkpoint file");
    }
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint format version " + std::to_string(version) +
                            " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
  }
  Checkpoint<T> ck;
  std::size_t n = 0;
  detail::expect_section(in, "config", n);
  std::string cfg_text;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw CheckpointError("checkpoint truncated in 'config'");
    cfg_text += line + '\n';
  }
  std::istringstream cfg_in(cfg_text);
  ck.config = parse_config(cfg_in);

  detail::expect_section(in, "types", n);
  for (std::size_t i = 0; i < n; ++i) ck.types.push_back(detail::json_line(in, "types"));
  if (ck.types.size() != ck.config.model.types) {
    throw CheckpointError("checkpoint lists " + std::to_string(ck.types.size()) + " type names, config says " +
                          std::to_string(ck.config.model.types));
  }
  detail::expect_section(in, "vocab", n);
  ck.vocab = Vocab(ck.config.model.prompts);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string w = detail::json_line(in, "vocab");
    if (ck.vocab.add_word(w) != ck.vocab.first_word_id() + i) {
      throw CheckpointError("checkpoint vocab repeats or reorders word '" + w + "'");
    }
  }

  // Expected tensors come from a freshly shaped parameter set.
  ck.params = init_params<T>(ck.config.model, ck.vocab.size(), 0);
  detail::expect_section(in, "tensors", n);
  std::vector<std::pair<std::string, nn::Parameter<T>*>> expected;
  ck.params.visit([&](const std::string& name, nn::Parameter<T>& p) { expected.emplace_back(name, &p); });
  if (n != expected.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(n) + " tensors, config implies " +
                          std::to_string(expected.size()));
  }
  std::vector<std::size_t> offsets;
  std::size_t running = 0;
  for (const auto& [name, p] : expected) {
    if (!std::getline(in, line)) throw CheckpointError("checkpoint truncated in 'tensors'");
    std::istringstream ss(line);
    std::string got;
    std::size_t rank = 0, offset = 0;
    ss >> got >> rank;
    nn::Shape shape(rank);
    for (auto& d : shape) ss >> d;
    ss >> offset;
    if (!ss) throw CheckpointError("checkpoint: malformed tensor line '" + line + "'");
    if (got != name) throw CheckpointError("checkpoint: expected tensor '" + name + "', found '" + got + "'");
    if (shape != p->value.shape) {
      throw CheckpointError("checkpoint: tensor '" + name + "' has shape " + nn::shape_string(shape) +
                            ", config implies " + nn::shape_string(p->value.shape));
    }
    if (offset != running) throw CheckpointError("checkpoint: tensor '" + name + "' has a bad offset");
    running += 4 * p->value.size();
  }
  std::size_t bytes = 0;
  detail::expect_section(in, "payload", bytes);
  if (bytes != running) throw CheckpointError("checkpoint payload size does not match the manifest");
  std::vector<unsigned char> raw(bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) throw CheckpointError("checkpoint payload truncated");
  std::size_t pos = 0;
  for (auto& [name, p] : expected) {
    for (T& v : p->value.data) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[pos + b]) << (8 * b);
      v = static_cast<T>(std::bit_cast<float>(bits));
      pos += 4;
    }
  }
  return ck;
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  return read_checkpoint<T>(in);
}

}  // namespace slotner
