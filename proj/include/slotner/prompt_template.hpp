#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slotner/nn/array.hpp"
#include "slotner/nn/kernels.hpp"

namespace slotner {

class SequenceTooLong : public Error {
 public:
  SequenceTooLong(std::size_t length, std::size_t max_len)
      : Error("input sequence of length " + std::to_string(length) +
              " exceeds encoder maximum " + std::to_string(max_len)),
        length_(length) {}
  std::size_t length() const { return length_; }

 private:
  std::size_t length_;
};

enum class TemplateKind { kDefault, kHard, kSoft };

inline TemplateKind parse_template_kind(std::string_view s) {
  if (s == "default") return TemplateKind::kDefault;
  if (s == "hard") return TemplateKind::kHard;
  if (s == "soft") return TemplateKind::kSoft;
  throw Error("unknown template kind '" + std::string(s) + "' (default|hard|soft)");
}

inline std::string to_string(TemplateKind k) {
  switch (k) {
    case TemplateKind::kHard: return "hard";
    case TemplateKind::kSoft: return "soft";
    default: return "default";
  }
}

// Tokens per prompt: the two slots plus the context words of the variant.
inline std::size_t prompt_width(TemplateKind k) {
  return k == TemplateKind::kDefault ? 2 : 5;
}

// Word ids plus reserved ids. Layout: [PAD] [UNK] [CLS], M position slots,
// M type slots, the learnable context tokens <s1> <s2> <s3>, then words.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kContextTokens = 3;

  explicit Vocab(std::size_t prompt_slots = 1) : slots_(prompt_slots) {
    if (prompt_slots == 0) throw Error("Vocab: at least one prompt slot is required");
    for (const char* w : {"is", "a", "entity"}) add_word(w);
  }

  std::size_t prompt_slots() const { return slots_; }
  std::size_t first_word_id() const { return 3 + 2 * slots_ + kContextTokens; }
  std::size_t size() const { return first_word_id() + words_.size(); }

  std::size_t position_slot(std::size_t i) const { return 3 + checked(i); }
  std::size_t type_slot(std::size_t i) const { return 3 + slots_ + checked(i); }
  std::size_t context_token(std::size_t j) const { return 3 + 2 * slots_ + j; }

  std::size_t add_word(const std::string& w) {
    auto it = index_.find(w);
    if (it != index_.end()) return it->second;
    const std::size_t id = first_word_id() + words_.size();
    index_.emplace(w, id);
    words_.push_back(w);
    return id;
  }

  std::size_t lookup(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kUnk : it->second;
  }

  bool is_reserved(std::size_t id) const { return id < first_word_id(); }

  // Words in id order, without reserved tokens.
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::size_t checked(std::size_t i) const {
    if (i >= slots_) {
      throw Error("Vocab: prompt " + std::to_string(i) + " exceeds " +
                  std::to_string(slots_) + " reserved slots");
    }
    return i;
  }

  std::size_t slots_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

// M prompts, then [CLS], then the sentence words. Indices are 0-based
// offsets into token_ids.
struct PromptedSequence {
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> position_slot_index;
  std::vector<std::size_t> type_slot_index;
  std::size_t prompt_length = 0;   // k: tokens before [CLS]
  std::size_t sentence_start = 0;  // index of the first word (k + 1)
  std::size_t word_count = 0;      // N

  std::size_t prompts() const { return position_slot_index.size(); }
  std::size_t length() const { return token_ids.size(); }
};

inline PromptedSequence build_input(const std::vector<std::string>& sentence,
                                    std::size_t prompts, TemplateKind kind,
                                    const Vocab& vocab, std::size_t max_len) {
  if (prompts == 0) throw Error("build_input: at least one prompt is required");
  if (sentence.empty()) throw Error("build_input: empty sentence");
  const std::size_t k = prompts * prompt_width(kind);
  const std::size_t total = k + 1 + sentence.size();
  if (total > max_len) throw SequenceTooLong(total, max_len);

  PromptedSequence seq;
  seq.token_ids.reserve(total);
  for (std::size_t i = 0; i < prompts; ++i) {
    seq.position_slot_index.push_back(seq.token_ids.size());
    seq.token_ids.push_back(vocab.position_slot(i));
    switch (kind) {
      case TemplateKind::kHard:
        seq.token_ids.push_back(vocab.lookup("is"));
        seq.token_ids.push_back(vocab.lookup("a"));
        break;
      case TemplateKind::kSoft:
        seq.token_ids.push_back(vocab.context_token(0));
        seq.token_ids.push_back(vocab.context_token(1));
        break;
      default: break;
    }
    seq.type_slot_index.push_back(seq.token_ids.size());
    seq.token_ids.push_back(vocab.type_slot(i));
    if (kind == TemplateKind::kHard) seq.token_ids.push_back(vocab.lookup("entity"));
    if (kind == TemplateKind::kSoft) seq.token_ids.push_back(vocab.context_token(2));
  }
  seq.prompt_length = seq.token_ids.size();
  seq.token_ids.push_back(Vocab::kCls);
  seq.sentence_start = seq.token_ids.size();
  for (const auto& w : sentence) seq.token_ids.push_back(vocab.lookup(w));
  seq.word_count = sentence.size();
  return seq;
}

// Square mask over the k + 1 + N tokens of a prompted sequence: [CLS] and
// sentence queries may not attend to any of the k prompt keys. Prompt
// queries are unrestricted.
inline nn::AttentionMask build_prompt_agnostic_mask(std::size_t words, std::size_t prompt_length) {
  const std::size_t n = prompt_length + 1 + words;
  nn::AttentionMask mask(n, n);
  for (std::size_t r = prompt_length; r < n; ++r)
    for (std::size_t c = 0; c < prompt_length; ++c) mask.block(r, c);
  return mask;
}

}  // namespace slotner
