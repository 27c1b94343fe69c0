#include "flowplan/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <unordered_map>

#include "flowplan/errors.hpp"

namespace flowplan {

std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c) && c != '\'') {
      // Apostrophes stay inside words ("don't"); other punctuation stands alone.
      flush();
      tokens.emplace_back(1, raw);
    } else {
      current += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return tokens;
}

std::string normalize(std::string_view text) {
  std::string out;
  for (const auto& t : normalize_tokens(text)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"}) push(t);
  for (DialogueAct act : kAllActs) push("<act:" + std::string(to_string(act)) + ">");
  push("<speaker:user>");
  push("<speaker:agent>");
}

void Vocabulary::push(std::string token) {
  const auto id = static_cast<TokenId>(tokens_.size());
  if (!index_.emplace(token, id).second)
    throw ValidationError("duplicate vocabulary token '" + token + "'");
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, std::size_t max_size,
                             std::size_t min_count) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& text : texts)
    for (auto& t : normalize_tokens(text)) ++counts[std::move(t)];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary vocab;
  for (auto& [token, count] : ranked) {
    if (vocab.size() >= max_size) break;
    if (count < min_count) break;
    if (vocab.contains(token)) continue;
    vocab.push(token);
  }
  return vocab;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary vocab;
  if (tokens.size() < kReserved) throw ValidationError("vocabulary shorter than reserved block");
  for (std::size_t i = 0; i < kReserved; ++i)
    if (tokens[i] != vocab.tokens_[i])
      throw ValidationError("vocabulary reserved block mismatch at id " + std::to_string(i));
  for (std::size_t i = kReserved; i < tokens.size(); ++i) vocab.push(tokens[i]);
  return vocab;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ValidationError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(token) > 0; }

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a("\n", h);
  }
  return h;
}

std::string Vocabulary::save() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::load(std::string_view text) {
  std::vector<std::string> tokens;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) tokens.push_back(line);
  return from_tokens(tokens);
}

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw ValidationError("tokenize: max_len must be at least 2");
  std::vector<TokenId> ids{Vocabulary::kBos};
  for (const auto& t : normalize_tokens(text)) {
    if (ids.size() + 1 >= max_len) break;
    ids.push_back(vocab.id(t));
  }
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::string detokenize(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == Vocabulary::kEos) break;
    if (Vocabulary::is_special(id) && id != Vocabulary::kUnk) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

}  // namespace flowplan
