#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lanhar/nn/layers.hpp"
#include "lanhar/nn/tokenizer.hpp"
#include "lanhar/types.hpp"

namespace lanhar::text {

using WarnFn = std::function<void(const std::string&)>;

struct TextEncoderConfig {
  int vocab_size = 8192;
  int d_model = 768;
  int n_layers = 4;
  int n_heads = 4;
  int max_len = 128;
  uint64_t seed = 0;
};

// Bidirectional transformer over hashed word tokens, mean-pooled into one
// embedding per text.
class TextEncoder {
 public:
  explicit TextEncoder(TextEncoderConfig cfg);

  // Builds the encoding graph on a tape; returns the pooled 1 x d node.
  nn::Var encode_on_tape(nn::Tape& t, const std::vector<int>& token_ids);

  // Eval-mode single encode / batch encode. Deterministic.
  EmbeddingVector encode(const std::string& text) const;
  std::vector<EmbeddingVector> encode_batch(const std::vector<std::string>& texts) const;

  std::vector<int> tokenize_checked(const std::string& text) const;

  const nn::HashTokenizer& tokenizer() const { return tokenizer_; }
  const TextEncoderConfig& config() const { return cfg_; }
  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;

  void set_warn(WarnFn warn) { warn_ = std::move(warn); }

 private:
  TextEncoderConfig cfg_;
  nn::HashTokenizer tokenizer_;
  nn::Parameter tok_table_;  // vocab x d
  nn::Matrix positions_;     // max_len x d, fixed
  std::vector<nn::TransformerLayer> layers_;
  WarnFn warn_;
};

struct TextDecoderConfig {
  int vocab_size = 8192;
  int d_model = 768;
  int n_layers = 2;
  int n_heads = 4;
  int max_len = 128;
  uint64_t seed = 0;
};

// Causal transformer conditioned on a pooled embedding prefixed as a virtual
// token; reconstructs the token sequence it came from.
class TextDecoder {
 public:
  explicit TextDecoder(TextDecoderConfig cfg);

  // Mean token cross-entropy for reconstructing target_ids from pooled (1 x d).
  nn::Var reconstruction_loss_on_tape(nn::Tape& t, nn::Var pooled,
                                      const std::vector<int>& target_ids);

  const TextDecoderConfig& config() const { return cfg_; }
  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;

 private:
  TextDecoderConfig cfg_;
  nn::Parameter tok_table_;  // vocab x d
  nn::Matrix positions_;
  std::vector<nn::TransformerLayer> layers_;
  nn::Linear out_proj_;      // d -> vocab
};

}  // namespace lanhar::text
