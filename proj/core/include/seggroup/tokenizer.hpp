// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace seggroup {

/// Lowercases ASCII letters and splits on anything that is not a letter or digit.
std::vector<std::string> split_words(std::string_view text);

/// Word-level tokenizer hashing words into a fixed vocabulary (no vocabulary file).
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBegin = 1;
  static constexpr int kEnd = 2;
  static constexpr int kFirstWordId = 3;

  explicit Tokenizer(int vocab_size);

  struct Result {
    std::vector<int> ids;  // begin, words..., end
    bool truncated = false;
  };

  /// Throws PreconditionError when the text holds no words.
  Result encode(std::string_view text, int context_len) const;
  int word_id(std::string_view word) const;
  int vocab_size() const { return vocab_size_; }

 private:
  int vocab_size_;
};

}  // namespace seggroup
