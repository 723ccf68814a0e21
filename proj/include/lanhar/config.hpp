#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanhar/quality_filter.hpp"

namespace lanhar::config {

struct DatasetSpec {
  std::string id;
  std::string path;
  std::string format;  // "csv" | "jsonl" | "" (inferred from the extension)
};

struct PreprocessConfig {
  double rate_hz = 20.0;
  int window_len = 120;
  int stride = 60;
};

struct BackendConfig {
  std::string kind = "mock";  // mock | replay | http
  int hallucination_pct = 0;
  std::string replay_dir;
  std::string endpoint;
  std::string model;
  std::string api_key_env = "LLM_API_KEY";  // credentials come from the environment only
  int timeout_ms = 30000;
  double temperature = 0.0;
  int max_tokens = 512;
};

struct TextStageConfig {
  int d_model = 768;
  int n_layers = 3;
  int n_heads = 2;
  int vocab_size = 8192;
  int max_len = 128;
  int decoder_layers = 2;
  double lr = 1e-5;
  int batch_size = 32;
  int epochs = 10;
  double tau = 0.07;
  double alpha = 0.1;
  double beta = 0.01;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  double val_fraction = 0.2;
  int triple_cap = 64;
};

struct SensorStageConfig {
  int d_model = 768;
  int n_layers = 3;
  int n_heads = 2;
  double lr = 1e-5;
  int batch_size = 32;
  int epochs = 10;
  double tau = 0.07;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  double val_fraction = 0.2;
};

struct EvalConfig {
  std::string source;
  std::string target;
  int label_variants = 3;
  std::optional<double> min_similarity;  // absent: always emit the best label
};

struct ExperimentConfig {
  uint64_t seed = 0;
  std::string runs_root = "runs";  // artifact location; not part of the fingerprint
  std::vector<DatasetSpec> datasets;
  PreprocessConfig preprocess;
  BackendConfig backend;
  filter::FilterConfig filter;
  TextStageConfig text;
  SensorStageConfig sensor;
  EvalConfig eval;

  // Normalized view of every fingerprint-relevant field, keys sorted.
  nlohmann::json normalized() const;
  // First 16 hex chars of the hash of the normalized config.
  std::string fingerprint() const;

  const DatasetSpec& dataset(const std::string& id) const;
};

// Parses and validates a config file, applying defaults for absent keys and
// then the dotted-path overrides (e.g. {"text.lr": 3e-5, "seed": 7}).
// Unknown keys and type mismatches are validation errors listing every
// offending path.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const nlohmann::json& overrides = nlohmann::json::object());

// Same, from config text already in memory.
ExperimentConfig parse_config(std::string_view text,
                              const nlohmann::json& overrides = nlohmann::json::object());

}  // namespace lanhar::config
