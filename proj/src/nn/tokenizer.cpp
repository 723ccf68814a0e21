#include "lanhar/nn/tokenizer.hpp"

#include <cctype>

#include "lanhar/error.hpp"
#include "lanhar/util.hpp"

namespace lanhar::nn {

HashTokenizer::HashTokenizer(int vocab_size, int max_len)
    : vocab_size_(vocab_size), max_len_(max_len) {
  if (vocab_size <= kFirstWordId) {
    raise(ErrorCode::Argument, "vocab_size must exceed the reserved id range");
  }
  if (max_len < 1) raise(ErrorCode::Argument, "max_len must be >= 1");
}

std::vector<int> HashTokenizer::encode(const std::string& text, bool* truncated) const {
  std::vector<int> ids;
  std::string word;
  const auto flush = [&] {
    if (word.empty()) return;
    const uint64_t h = fnv1a64(word);
    ids.push_back(kFirstWordId +
                  static_cast<int>(h % static_cast<uint64_t>(vocab_size_ - kFirstWordId)));
    word.clear();
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) {
      word.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      flush();
    }
  }
  flush();
  if (truncated) *truncated = ids.size() > static_cast<size_t>(max_len_);
  if (ids.size() > static_cast<size_t>(max_len_)) ids.resize(static_cast<size_t>(max_len_));
  return ids;
}

}  // namespace lanhar::nn
