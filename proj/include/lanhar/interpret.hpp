#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanhar/signal_stats.hpp"
#include "lanhar/types.hpp"

namespace lanhar::interpret {

enum class TargetKind { Sensor, Label };

const char* to_string(TargetKind kind);
TargetKind target_kind_from_string(const std::string& s);

struct PromptSection {
  std::string name;  // data_introduction | data_analysis | knowledge | task_introduction
  std::string text;
};

struct PromptBundle {
  std::vector<PromptSection> sections;
  TargetKind target_kind = TargetKind::Sensor;
  std::string target_id;     // window_id or canonical label
  std::string content_hash;  // sha256 of the rendered prompt

  // The full text sent to a backend: sections joined in order.
  std::string render() const;
};

// Sensor prompts carry all four sections in canonical order. Raw samples are
// summarized beyond 120 per channel to bound prompt size.
PromptBundle build_sensor_prompt(const IMUWindow& window, const stats::WindowStats& stats,
                                 const std::vector<std::string>& knowledge_snippets);

// Label prompts carry a single task section requesting a general overview, the
// accelerometer/gyroscope patterns, and the body parts involved. Distinct
// variant seeds yield distinct phrasings of the request.
PromptBundle build_label_prompt(const std::string& label, int variant_seed = 0);

// Replaces the task section with the verbatim correction instruction plus the
// embedded previous response.
PromptBundle build_regen_prompt(const PromptBundle& original, const std::string& previous_response);

struct DecodeParams {
  double temperature = 0.0;
  int max_tokens = 512;
};

class LLMBackend {
 public:
  virtual ~LLMBackend() = default;
  virtual const std::string& backend_id() const = 0;
  // Throws Error(BackendTransient) for retryable failures, Error(Backend) for
  // permanent ones.
  virtual std::string generate(const std::string& prompt, const DecodeParams& decode) = 0;
};

struct SemanticInterpretation {
  std::string target_id;
  TargetKind kind = TargetKind::Sensor;
  std::string text;
  std::string backend_id;
  int attempt = 1;
  std::string prompt_hash;

  nlohmann::ordered_json to_json() const;
  static SemanticInterpretation from_json(const nlohmann::json& doc);
};

// Content-addressed response store: one JSON file per
// (backend_id, content_hash, decode parameters, attempt). Writes are atomic;
// re-generations create new records instead of overwriting.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<std::string> lookup(const std::string& backend_id,
                                    const std::string& content_hash, const DecodeParams& decode,
                                    int attempt) const;
  void store(const std::string& backend_id, const std::string& content_hash,
             const DecodeParams& decode, int attempt, const std::string& response);

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path key_path(const std::string& backend_id, const std::string& content_hash,
                                 const DecodeParams& decode, int attempt) const;
  std::filesystem::path dir_;
};

struct GenerateOptions {
  DecodeParams decode;
  int attempt = 1;      // stamped into the interpretation; regen calls pass prior + 1
  int max_retries = 3;  // transient-failure budget per call
  double backoff_initial_ms = 100.0;
  // Injectable for tests; the default sleeps for the requested milliseconds.
  std::function<void(double)> sleep_ms;
};

struct InterpretCounters {
  long backend_calls = 0;
  long cache_hits = 0;
};

// Cache-first generation: consults the cache, otherwise calls the backend with
// bounded retries and exponential backoff, stores the response, and returns
// the interpretation. Empty responses raise a parse error.
SemanticInterpretation generate_interpretation(const PromptBundle& bundle, LLMBackend& backend,
                                               ResponseCache& cache,
                                               const GenerateOptions& opts = {},
                                               InterpretCounters* counters = nullptr);

// ---- Backends ----

struct MockBackendConfig {
  int hallucination_pct = 0;  // deterministic injection rate, keyed by prompt hash
  uint64_t seed = 0;
};

// Deterministic template backend. Sensor prompts are answered from the
// embedded statistics with banded frequency/amplitude vocabulary; label
// prompts are answered from a fixed knowledge table sharing that vocabulary;
// correction prompts always produce the clean rendering.
class MockBackend : public LLMBackend {
 public:
  explicit MockBackend(MockBackendConfig cfg = {});
  const std::string& backend_id() const override { return id_; }
  std::string generate(const std::string& prompt, const DecodeParams& decode) override;

  long calls() const { return calls_; }

  // The banded sensor rendering used for clean answers; exposed so tests can
  // pin down the vocabulary contract.
  static std::string describe_stats(const stats::WindowStats& stats);
  static const std::map<std::string, std::string>& label_knowledge();

 private:
  std::string id_ = "mock";
  MockBackendConfig cfg_;
  long calls_ = 0;
};

// Serves previously recorded responses from a directory of
// <sha256(prompt)>.json files; any miss is a permanent backend error.
class ReplayBackend : public LLMBackend {
 public:
  explicit ReplayBackend(std::filesystem::path dir);
  const std::string& backend_id() const override { return id_; }
  std::string generate(const std::string& prompt, const DecodeParams& decode) override;

  // Records a response so a later run can replay it.
  static void record(const std::filesystem::path& dir, const std::string& prompt,
                     const std::string& response);

 private:
  std::string id_ = "replay";
  std::filesystem::path dir_;
};

struct HttpBackendConfig {
  std::string endpoint;  // e.g. http://host:port/v1/generate
  std::string model;
  std::string api_key_env = "LLM_API_KEY";  // credentials come only from the environment
  int timeout_ms = 30000;
};

// Single text-in/text-out JSON endpoint: POST {model, prompt, temperature,
// max_tokens} -> {"text": ...}. Connection failures and 5xx/429 responses are
// transient; other HTTP errors are permanent configuration problems.
class HttpBackend : public LLMBackend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg);
  const std::string& backend_id() const override { return id_; }
  std::string generate(const std::string& prompt, const DecodeParams& decode) override;

 private:
  std::string id_;
  HttpBackendConfig cfg_;
  std::string api_key_;
  std::string host_;  // scheme://host[:port]
  std::string path_;
};

}  // namespace lanhar::interpret
