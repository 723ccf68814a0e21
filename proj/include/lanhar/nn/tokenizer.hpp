#pragma once

#include <string>
#include <vector>

namespace lanhar::nn {

// Hashing word tokenizer: no trained vocabulary, ids are stable across runs
// and machines. Words are lowercased alphanumeric runs hashed into
// [kFirstWordId, vocab_size). Ids 0..3 are reserved.
class HashTokenizer {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kBosId = 1;
  static constexpr int kEosId = 2;
  static constexpr int kUnkId = 3;
  static constexpr int kFirstWordId = 4;

  HashTokenizer(int vocab_size, int max_len);

  // Head-truncates at max_len; *truncated reports whether that happened.
  std::vector<int> encode(const std::string& text, bool* truncated = nullptr) const;

  int vocab_size() const { return vocab_size_; }
  int max_len() const { return max_len_; }

 private:
  int vocab_size_;
  int max_len_;
};

}  // namespace lanhar::nn
