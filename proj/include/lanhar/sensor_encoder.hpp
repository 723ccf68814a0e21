#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <vector>

#include <json.hpp>

#include "lanhar/nn/layers.hpp"
#include "lanhar/types.hpp"

namespace lanhar::sensor {

// Per-channel standardization fitted on source training windows only.
class Normalizer {
 public:
  void fit(const std::vector<IMUWindow>& windows);
  nn::Matrix apply(const IMUWindow& window) const;
  bool fitted() const { return fitted_; }

  nlohmann::ordered_json to_json() const;
  static Normalizer from_json(const nlohmann::json& doc);

 private:
  std::array<double, kNumChannels> mean_{};
  std::array<double, kNumChannels> scale_{};
  bool fitted_ = false;
};

struct SensorEncoderConfig {
  int d_model = 768;
  int n_layers = 3;
  int n_heads = 2;
  int window_len = 120;
  uint64_t seed = 0;
};

// Projection 6 -> d_model, layer norm, fixed positional encoding, transformer
// stack, mean pooling over time.
class SensorEncoder {
 public:
  explicit SensorEncoder(SensorEncoderConfig cfg);

  nn::Var encode_on_tape(nn::Tape& t, const nn::Matrix& x_norm);
  EmbeddingVector forward(const nn::Matrix& x_norm) const;

  const SensorEncoderConfig& config() const { return cfg_; }
  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  long parameter_count() const;

 private:
  SensorEncoderConfig cfg_;
  nn::Linear proj_;
  nn::LayerNorm input_ln_;
  nn::Matrix positions_;
  std::vector<nn::TransformerLayer> layers_;
};

struct SensorTrainConfig {
  double tau = 0.07;
  double lr = 1e-5;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  int batch_size = 32;
  int epochs = 10;
  uint64_t seed = 0;
  double val_fraction = 0.2;
};

struct SensorEpochRecord {
  int epoch = 0;
  double l_sensor = 0.0;
  double val_retrieval = 0.0;
};

struct SensorTrainResult {
  std::vector<SensorEpochRecord> history;
  int best_epoch = 0;
  double best_val_retrieval = 0.0;
};

// Fits the encoder embeddings to frozen interpretation embeddings via the
// symmetric contrastive loss. Checkpoints the epoch with the best validation
// retrieval accuracy (fraction of windows whose nearest target is their own).
SensorTrainResult train_sensor_encoder(SensorEncoder& encoder,
                                       const std::vector<IMUWindow>& windows,
                                       const std::vector<EmbeddingVector>& z_targets,
                                       const Normalizer& normalizer,
                                       const SensorTrainConfig& cfg,
                                       const std::filesystem::path& checkpoint_path,
                                       const std::filesystem::path& metrics_path,
                                       const std::string& text_checkpoint_id);

// Inference artifact: weight archive + sidecar manifest (config, normalizer,
// rate, producing text-checkpoint id).
void save_sensor_checkpoint(const std::filesystem::path& path, const SensorEncoder& encoder,
                            const Normalizer& normalizer, double rate_hz,
                            const nlohmann::ordered_json& extra);

struct SensorModel {
  std::unique_ptr<SensorEncoder> encoder;
  Normalizer normalizer;
  double rate_hz = kDefaultRateHz;
  nlohmann::json sidecar;
};

SensorModel load_sensor_checkpoint(const std::filesystem::path& path);

}  // namespace lanhar::sensor
