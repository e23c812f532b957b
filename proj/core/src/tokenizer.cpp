// SPDX-License-Identifier: Apache-2.0
#include "seggroup/tokenizer.hpp"

#include <cctype>
#include <cstdint>

#include "seggroup/error.hpp"

namespace seggroup {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Tokenizer::Tokenizer(int vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size <= kFirstWordId) throw ConfigError("tokenizer vocabulary too small");
}

int Tokenizer::word_id(std::string_view word) const {
  // FNV-1a
  std::uint64_t h = 1469598103934665603ull;
  for (char c : word) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return kFirstWordId + static_cast<int>(h % static_cast<std::uint64_t>(vocab_size_ - kFirstWordId));
}

Tokenizer::Result Tokenizer::encode(std::string_view text, int context_len) const {
  if (context_len < 3) throw ConfigError("text context length must be >= 3");
  const auto words = split_words(text);
  if (words.empty()) throw PreconditionError("cannot encode empty text");
  Result r;
  const auto max_words = static_cast<std::size_t>(context_len - 2);
  r.truncated = words.size() > max_words;
  r.ids.push_back(kBegin);
  for (std::size_t i = 0; i < words.size() && i < max_words; ++i) r.ids.push_back(word_id(words[i]));
  r.ids.push_back(kEnd);
  return r;
}

}  // namespace seggroup
