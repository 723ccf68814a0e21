#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanhar/text_model.hpp"
#include "lanhar/types.hpp"

namespace lanhar::train {

struct TrainConfig {
  double tau = 0.07;
  double alpha = 0.1;
  double beta = 0.01;
  double lr = 1e-5;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  int batch_size = 32;
  int epochs = 10;
  uint64_t seed = 0;
  double val_fraction = 0.2;
  int triple_cap = 64;
};

void validate(const TrainConfig& cfg);

// One training example: the interpretation of a window, the interpretation of
// its activity label, and the canonical label itself.
struct TrainPair {
  std::string sensor_text;
  std::string label_text;
  std::string label;
};

struct EpochRecord {
  int epoch = 0;
  double l_text = 0.0;
  double l_align = 0.0;
  double l_ca1 = 0.0;
  double l_ca2 = 0.0;
  double l_ca3 = 0.0;
  double l_re = 0.0;
  double val_align = 0.0;
};

struct TextTrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_align = 0.0;
};

// Optimizes l_align + alpha * (ca1 + ca2 + ca3) + beta * reconstruction over
// the pairs. Checkpoints the epoch with the best validation alignment loss to
// checkpoint_path (weights + sidecar) and appends one JSONL record per epoch
// to metrics_path. Deterministic for a fixed seed. On divergence the last
// finite parameter state is checkpointed and a numeric error is thrown.
TextTrainResult train_text_encoder(text::TextEncoder& encoder, text::TextDecoder& decoder,
                                   const std::vector<TrainPair>& pairs, const TrainConfig& cfg,
                                   const CategoryTable& categories,
                                   const std::filesystem::path& checkpoint_path,
                                   const std::filesystem::path& metrics_path);

// Saves/loads paired encoder+decoder weights with their configs in the sidecar.
void save_text_checkpoint(const std::filesystem::path& path, const text::TextEncoder& encoder,
                          const text::TextDecoder& decoder, const nlohmann::ordered_json& extra);

struct TextModels {
  std::unique_ptr<text::TextEncoder> encoder;
  std::unique_ptr<text::TextDecoder> decoder;
  nlohmann::json sidecar;
};

TextModels load_text_checkpoint(const std::filesystem::path& path);

}  // namespace lanhar::train
