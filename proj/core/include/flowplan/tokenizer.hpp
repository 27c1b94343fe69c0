#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flowplan/corpus.hpp"

namespace flowplan {

// Lower-cases ASCII, splits on whitespace and isolates punctuation characters
// as their own tokens. Shared by the vocabulary and the metrics.
std::vector<std::string> normalize_tokens(std::string_view text);
std::string normalize(std::string_view text);

using TokenId = std::int32_t;

// Token <-> id bijection. The reserved block comes first, in a fixed order:
// <pad> <bos> <eos> <unk> <sep>, one marker per dialogue act, one per speaker.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kSep = 4;
  static constexpr TokenId kFirstAct = 5;
  static constexpr TokenId kFirstSpeaker = kFirstAct + static_cast<TokenId>(kNumActs);
  static constexpr std::size_t kReserved = 5 + kNumActs + 2;

  Vocabulary();  // reserved block only

  // Frequency-ranked vocabulary (ties broken lexicographically), capped at max_size.
  static Vocabulary build(const std::vector<std::string>& texts, std::size_t max_size = 8000,
                          std::size_t min_count = 1);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  static TokenId act_marker(DialogueAct act) {
    return kFirstAct + static_cast<TokenId>(act);
  }
  static TokenId speaker_marker(Speaker s) { return kFirstSpeaker + static_cast<TokenId>(s); }
  static bool is_special(TokenId id) { return id >= 0 && id < static_cast<TokenId>(kReserved); }

  // FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;

  std::string save() const;  // line-delimited, reserved block first
  static Vocabulary load(std::string_view text);

 private:
  void push(std::string token);

  std::vector<std::string> tokens_;
  std::map<std::string, TokenId, std::less<>> index_;
};

// [BOS, ids..., EOS], truncated so the total length is at most max_len.
std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab,
                              std::size_t max_len = 64);
// Joins non-special tokens with single spaces; stops at EOS.
std::string detokenize(const std::vector<TokenId>& ids, const Vocabulary& vocab);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace flowplan
