#include "lanhar/text_model.hpp"

#include <iostream>

#include "lanhar/error.hpp"
#include "lanhar/nn/ops.hpp"

namespace lanhar::text {

using nn::Tape;
using nn::Var;

TextEncoder::TextEncoder(TextEncoderConfig cfg)
    : cfg_(cfg),
      tokenizer_(cfg.vocab_size, cfg.max_len),
      warn_([](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }) {
  if (cfg_.d_model < 1 || cfg_.n_layers < 1) {
    raise(ErrorCode::Argument, "text encoder needs d_model >= 1 and n_layers >= 1");
  }
  Rng rng(derive_seed(cfg_.seed, "text_encoder_init"));
  tok_table_ = nn::Parameter("text_encoder.tok_table",
                             nn::normal_init(cfg_.vocab_size, cfg_.d_model, rng));
  positions_ = nn::sinusoidal_positions(cfg_.max_len, cfg_.d_model);
  layers_.reserve(static_cast<size_t>(cfg_.n_layers));
  for (int i = 0; i < cfg_.n_layers; ++i) {
    layers_.emplace_back("text_encoder.layer" + std::to_string(i), cfg_.d_model, cfg_.n_heads,
                         rng);
  }
}

std::vector<int> TextEncoder::tokenize_checked(const std::string& text) const {
  bool truncated = false;
  auto ids = tokenizer_.encode(text, &truncated);
  if (ids.empty()) raise(ErrorCode::Argument, "cannot encode empty text");
  if (truncated && warn_) {
    warn_("text truncated to " + std::to_string(tokenizer_.max_len()) + " tokens");
  }
  return ids;
}

Var TextEncoder::encode_on_tape(Tape& t, const std::vector<int>& token_ids) {
  if (token_ids.empty()) raise(ErrorCode::Argument, "cannot encode an empty token sequence");
  const int len = static_cast<int>(token_ids.size());
  Var emb = gather_rows(t.param(tok_table_), token_ids);
  Var x = add(emb, t.input(positions_.topRows(len)));
  for (auto& layer : layers_) x = layer.forward(t, x, /*causal=*/false);
  return mean_rows(x);
}

EmbeddingVector TextEncoder::encode(const std::string& text) const {
  auto ids = tokenize_checked(text);
  Tape t;
  // encode_on_tape only mutates parameters through backward, which is never
  // called here, so the const_cast stays observationally const.
  Var pooled = const_cast<TextEncoder*>(this)->encode_on_tape(t, ids);
  return t.value(pooled).row(0).transpose();
}

std::vector<EmbeddingVector> TextEncoder::encode_batch(const std::vector<std::string>& texts) const {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& text : texts) out.push_back(encode(text));
  return out;
}

std::vector<nn::Parameter*> TextEncoder::parameters() {
  std::vector<nn::Parameter*> out{&tok_table_};
  for (auto& layer : layers_) layer.collect(out);
  return out;
}

std::vector<const nn::Parameter*> TextEncoder::parameters() const {
  auto mut = const_cast<TextEncoder*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

TextDecoder::TextDecoder(TextDecoderConfig cfg) : cfg_(cfg) {
  if (cfg_.d_model < 1 || cfg_.n_layers < 1) {
    raise(ErrorCode::Argument, "text decoder needs d_model >= 1 and n_layers >= 1");
  }
  Rng rng(derive_seed(cfg_.seed, "text_decoder_init"));
  tok_table_ = nn::Parameter("text_decoder.tok_table",
                             nn::normal_init(cfg_.vocab_size, cfg_.d_model, rng));
  positions_ = nn::sinusoidal_positions(cfg_.max_len + 1, cfg_.d_model);
  layers_.reserve(static_cast<size_t>(cfg_.n_layers));
  for (int i = 0; i < cfg_.n_layers; ++i) {
    layers_.emplace_back("text_decoder.layer" + std::to_string(i), cfg_.d_model, cfg_.n_heads,
                         rng);
  }
  out_proj_ = nn::Linear("text_decoder.out_proj", cfg_.d_model, cfg_.vocab_size, rng);
}

Var TextDecoder::reconstruction_loss_on_tape(Tape& t, Var pooled,
                                             const std::vector<int>& target_ids) {
  if (target_ids.empty()) raise(ErrorCode::Argument, "reconstruction target is empty");
  if (t.value(pooled).rows() != 1 || t.value(pooled).cols() != cfg_.d_model) {
    raise(ErrorCode::Argument, "pooled embedding must be 1 x d_model");
  }
  if (static_cast<int>(target_ids.size()) > cfg_.max_len) {
    raise(ErrorCode::Argument, "reconstruction target exceeds decoder position limit");
  }
  const int len = static_cast<int>(target_ids.size());

  // Input row i predicts target i: [virtual token, e(t_0) .. e(t_{len-2})].
  std::vector<Var> rows{pooled};
  if (len > 1) {
    std::vector<int> prefix(target_ids.begin(), target_ids.end() - 1);
    rows.push_back(gather_rows(t.param(tok_table_), prefix));
  }
  Var x = add(concat_rows(rows), t.input(positions_.topRows(len)));
  for (auto& layer : layers_) x = layer.forward(t, x, /*causal=*/true);
  Var logits = out_proj_.forward(t, x);
  return cross_entropy_rows(logits, target_ids);
}

std::vector<nn::Parameter*> TextDecoder::parameters() {
  std::vector<nn::Parameter*> out{&tok_table_};
  for (auto& layer : layers_) layer.collect(out);
  out_proj_.collect(out);
  return out;
}

std::vector<const nn::Parameter*> TextDecoder::parameters() const {
  auto mut = const_cast<TextDecoder*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

}  // namespace lanhar::text
