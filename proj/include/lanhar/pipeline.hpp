#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanhar/align_trainer.hpp"
#include "lanhar/config.hpp"
#include "lanhar/eval.hpp"
#include "lanhar/inference.hpp"
#include "lanhar/interpret.hpp"
#include "lanhar/quality_filter.hpp"
#include "lanhar/sensor_encoder.hpp"
#include "lanhar/signal_stats.hpp"
#include "lanhar/types.hpp"

namespace lanhar::pipeline {

// Artifact directory layout for one experiment fingerprint.
struct RunLayout {
  std::filesystem::path root;
  std::filesystem::path data;
  std::filesystem::path cache;
  std::filesystem::path checkpoints;
  std::filesystem::path banks;
  std::filesystem::path reports;

  static RunLayout create(const config::ExperimentConfig& cfg);
};

std::unique_ptr<interpret::LLMBackend> make_backend(const config::BackendConfig& cfg);

// Loads a recording file, harmonizes labels, resamples to the configured
// rate and cuts fixed-length windows. Windows are re-addressed under the
// configured dataset id.
std::vector<IMUWindow> ingest_dataset(const config::DatasetSpec& ds,
                                      const config::PreprocessConfig& pre);

// One dataset's windows with their statistics and interpretations, aligned.
struct InterpretedCorpus {
  std::vector<IMUWindow> windows;
  std::vector<stats::WindowStats> stats;
  std::vector<interpret::SemanticInterpretation> interps;
};

InterpretedCorpus interpret_dataset(const std::vector<IMUWindow>& windows,
                                    interpret::LLMBackend& backend,
                                    interpret::ResponseCache& cache,
                                    const interpret::DecodeParams& decode,
                                    interpret::InterpretCounters* counters = nullptr);

// Variant description texts per label, variant index 0 first.
std::map<std::string, std::vector<std::string>> label_interpretations(
    const std::vector<std::string>& labels, int variants, interpret::LLMBackend& backend,
    interpret::ResponseCache& cache, const interpret::DecodeParams& decode,
    interpret::InterpretCounters* counters = nullptr);

// KL-driven filtering over a corpus grouped by gold label. Regenerations go
// back through the backend; the returned interpretations stay aligned with
// the input windows.
struct FilterOutcome {
  std::vector<interpret::SemanticInterpretation> interps;
  filter::FilterResult result;
};

FilterOutcome filter_corpus(const InterpretedCorpus& corpus, const text::TextEncoder& embedder,
                            interpret::LLMBackend& backend, interpret::ResponseCache& cache,
                            const interpret::DecodeParams& decode,
                            const filter::FilterConfig& fcfg,
                            interpret::InterpretCounters* counters = nullptr);

struct TextStageOutcome {
  std::string checkpoint_id;
  train::TextTrainResult result;
};

TextStageOutcome train_text_stage(const std::vector<train::TrainPair>& pairs,
                                  const config::ExperimentConfig& cfg, uint64_t seed_base,
                                  const std::filesystem::path& checkpoint_path,
                                  const std::filesystem::path& metrics_path);

struct SensorStageOutcome {
  std::string checkpoint_id;
  sensor::SensorTrainResult result;
};

// Aligns the sensor encoder to the frozen text embeddings of the windows'
// interpretations.
SensorStageOutcome train_sensor_stage(const std::vector<IMUWindow>& windows,
                                      const std::vector<std::string>& interpretation_texts,
                                      const text::TextEncoder& text_encoder,
                                      const std::string& text_checkpoint_id,
                                      const config::ExperimentConfig& cfg, uint64_t seed_base,
                                      const std::filesystem::path& checkpoint_path,
                                      const std::filesystem::path& metrics_path);

// Builds a bank over the given labels from the generated description texts.
infer::LabelBank assemble_bank(const std::vector<std::string>& labels,
                               const std::map<std::string, std::vector<std::string>>& label_texts,
                               const text::TextEncoder& encoder,
                               const std::string& text_checkpoint_id);

// One full source -> target setting run in memory (interpret, filter, both
// training stages, bank, classification), sharing the response cache.
struct SettingOptions {
  std::optional<std::vector<std::string>> train_labels;  // restrict training windows
  std::optional<std::vector<std::string>> eval_labels;   // restrict evaluated target windows
  std::vector<std::string> extra_bank_labels;            // added by description alone
  std::string tag;                                       // checkpoint filename stem
};

struct SettingOutcome {
  eval::EvalReport report;
  eval::KlReport kl;
  nlohmann::ordered_json summary;
};

SettingOutcome run_setting(const config::ExperimentConfig& cfg, const RunLayout& layout,
                           const std::map<std::string, std::vector<IMUWindow>>& corpus,
                           const std::string& source, const std::string& target,
                           interpret::LLMBackend& backend, interpret::ResponseCache& cache,
                           const SettingOptions& opts = {});

// Named step dispatcher behind the CLI: ingest, analyze, interpret, filter,
// train-text, train-sensor, build-bank, infer, evaluate, report. Returns the
// step's result document (fingerprint embedded); missing upstream artifacts
// raise dependency errors naming the artifact.
nlohmann::ordered_json run_step(const config::ExperimentConfig& cfg, const std::string& step,
                                const nlohmann::json& args = nlohmann::json::object());

const std::vector<std::string>& step_names();

}  // namespace lanhar::pipeline
