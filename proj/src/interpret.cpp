#include "lanhar/interpret.hpp"

#include <chrono>
#include <thread>

#include "lanhar/error.hpp"
#include "lanhar/sha256.hpp"
#include "lanhar/util.hpp"

namespace lanhar::interpret {

namespace {

constexpr int kMaxRawSamples = 120;  // per channel, beyond which the sequence is summarized

constexpr const char* kCorrectionInstruction =
    "This is your previous response to the task. Please analyze it step by step to identify any "
    "logical errors, inconsistencies with real-world knowledge, or discrepancies with the input "
    "data. Provide a corrected response according to the required format.";

std::string finish(PromptBundle& bundle) {
  bundle.content_hash = sha256_hex(bundle.render());
  return bundle.content_hash;
}

}  // namespace

const char* to_string(TargetKind kind) {
  return kind == TargetKind::Sensor ? "sensor" : "label";
}

TargetKind target_kind_from_string(const std::string& s) {
  if (s == "sensor") return TargetKind::Sensor;
  if (s == "label") return TargetKind::Label;
  raise(ErrorCode::Parse, "unknown interpretation kind: " + s);
}

std::string PromptBundle::render() const {
  std::string out;
  for (const PromptSection& s : sections) {
    out += "## ";
    out += s.name;
    out += "\n";
    out += s.text;
    out += "\n\n";
  }
  return out;
}

PromptBundle build_sensor_prompt(const IMUWindow& window, const stats::WindowStats& stats,
                                 const std::vector<std::string>& knowledge_snippets) {
  PromptBundle bundle;
  bundle.target_kind = TargetKind::Sensor;
  bundle.target_id = window.window_id;

  std::string intro =
      "The input is one fixed-length window of a six-channel inertial recording sampled at " +
      format_double(window.rate_hz, 1) +
      " Hz while a person performed an unknown activity. Channels ax, ay, az are accelerometer "
      "axes in m/s^2 (gravity included); channels gx, gy, gz are gyroscope axes in rad/s.";
  bundle.sections.push_back({"data_introduction", intro});

  std::string analysis =
      "Per-channel statistics (mean, standard deviation, max, min, amplitude, dominant frequency "
      "in Hz, periodicity score in [0,1], degeneracy flag):\n";
  analysis += stats::to_json(stats).dump();
  const auto rows = window.data.rows();
  const auto shown = std::min<Eigen::Index>(rows, kMaxRawSamples);
  analysis += "\nRaw samples (" + std::to_string(shown) + " of " + std::to_string(rows) +
              " per channel";
  if (shown < rows) analysis += "; remainder summarized by the statistics above";
  analysis += "):";
  for (int c = 0; c < kNumChannels; ++c) {
    analysis += "\n";
    analysis += kChannelNames[c];
    analysis += ":";
    for (Eigen::Index r = 0; r < shown; ++r) {
      analysis += " " + format_double(window.data(r, c), 3);
    }
  }
  bundle.sections.push_back({"data_analysis", analysis});

  std::string knowledge;
  if (knowledge_snippets.empty()) {
    knowledge = "No additional background knowledge provided.";
  } else {
    for (size_t i = 0; i < knowledge_snippets.size(); ++i) {
      if (i > 0) knowledge += "\n";
      knowledge += knowledge_snippets[i];
    }
  }
  bundle.sections.push_back({"knowledge", knowledge});

  bundle.sections.push_back(
      {"task_introduction",
       "Describe the motion captured by this window in two or three plain-text sentences. State "
       "the dominant frequency band, the amplitude regime, what the gyroscope indicates, and the "
       "kind of movement these suggest. Do not name an activity label; describe the signal. "
       "Respond with the description only."});

  finish(bundle);
  return bundle;
}

PromptBundle build_label_prompt(const std::string& label, int variant_seed) {
  if (!is_canonical_label(label)) {
    raise(ErrorCode::Label, "cannot build a label prompt for non-canonical label: " + label);
  }
  PromptBundle bundle;
  bundle.target_kind = TargetKind::Label;
  bundle.target_id = label;

  std::string task =
      "Generate a description of the activity \"" + label +
      "\" covering three aspects: a general overview of the activity; the states or patterns the "
      "accelerometer and gyroscope would detect while it is performed; and the body parts likely "
      "involved in performing it. Respond with the description only.";
  if (variant_seed > 0) {
    task += " Provide phrasing variant " + std::to_string(variant_seed) +
            ": keep the same facts but use wording that differs from the other variants.";
  }
  bundle.sections.push_back({"task_introduction", task});

  finish(bundle);
  return bundle;
}

PromptBundle build_regen_prompt(const PromptBundle& original,
                                const std::string& previous_response) {
  if (trim(previous_response).empty()) {
    raise(ErrorCode::Argument, "regeneration requires the previous response");
  }
  PromptBundle bundle = original;
  bundle.content_hash.clear();
  bool replaced = false;
  for (PromptSection& s : bundle.sections) {
    if (s.name == "task_introduction") {
      s.text = std::string(kCorrectionInstruction) + "\n\nPrevious response:\n" + previous_response;
      replaced = true;
    }
  }
  if (!replaced) raise(ErrorCode::Argument, "prompt bundle has no task section to replace");
  finish(bundle);
  return bundle;
}

nlohmann::ordered_json SemanticInterpretation::to_json() const {
  return {{"target_id", target_id}, {"kind", interpret::to_string(kind)},
          {"text", text},           {"backend_id", backend_id},
          {"attempt", attempt},     {"prompt_hash", prompt_hash}};
}

SemanticInterpretation SemanticInterpretation::from_json(const nlohmann::json& doc) {
  SemanticInterpretation si;
  si.target_id = doc.at("target_id").get<std::string>();
  si.kind = target_kind_from_string(doc.at("kind").get<std::string>());
  si.text = doc.at("text").get<std::string>();
  si.backend_id = doc.at("backend_id").get<std::string>();
  si.attempt = doc.at("attempt").get<int>();
  si.prompt_hash = doc.at("prompt_hash").get<std::string>();
  if (si.text.empty()) raise(ErrorCode::Parse, "interpretation text is empty: " + si.target_id);
  if (si.attempt < 1) raise(ErrorCode::Parse, "interpretation attempt must be >= 1");
  return si;
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  ensure_directory(dir_);
}

namespace {

std::string decode_key(const DecodeParams& decode) {
  // Decode parameters are part of the key so differently-sampled responses
  // never alias.
  const std::string repr =
      format_double(decode.temperature, 6) + "|" + std::to_string(decode.max_tokens);
  return sha256_hex(repr).substr(0, 8);
}

std::string sanitize_id(const std::string& id) {
  std::string out;
  for (char ch : id) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                    (ch >= '0' && ch <= '9') || ch == '-' || ch == '_';
    out += ok ? ch : '_';
  }
  return out.empty() ? std::string("backend") : out;
}

}  // namespace

std::filesystem::path ResponseCache::key_path(const std::string& backend_id,
                                              const std::string& content_hash,
                                              const DecodeParams& decode, int attempt) const {
  return dir_ / sanitize_id(backend_id) /
         (content_hash + "_" + decode_key(decode) + "_a" + std::to_string(attempt) + ".json");
}

std::optional<std::string> ResponseCache::lookup(const std::string& backend_id,
                                                 const std::string& content_hash,
                                                 const DecodeParams& decode, int attempt) const {
  const auto path = key_path(backend_id, content_hash, decode, attempt);
  if (!std::filesystem::exists(path)) return std::nullopt;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Parse, "corrupt cache record " + path.string() + ": " + e.what());
  }
  if (doc.at("content_hash").get<std::string>() != content_hash) {
    raise(ErrorCode::Validation, "cache record hash mismatch: " + path.string());
  }
  return doc.at("response").get<std::string>();
}

void ResponseCache::store(const std::string& backend_id, const std::string& content_hash,
                          const DecodeParams& decode, int attempt, const std::string& response) {
  const auto path = key_path(backend_id, content_hash, decode, attempt);
  ensure_directory(path.parent_path());
  nlohmann::ordered_json doc{{"backend_id", backend_id},
                             {"content_hash", content_hash},
                             {"temperature", decode.temperature},
                             {"max_tokens", decode.max_tokens},
                             {"attempt", attempt},
                             {"response", response}};
  write_text_file_atomic(path, doc.dump(2) + "\n");
}

SemanticInterpretation generate_interpretation(const PromptBundle& bundle, LLMBackend& backend,
                                               ResponseCache& cache, const GenerateOptions& opts,
                                               InterpretCounters* counters) {
  if (bundle.content_hash.empty()) raise(ErrorCode::Argument, "prompt bundle has no content hash");
  if (opts.attempt < 1) raise(ErrorCode::Argument, "attempt must be >= 1");
  if (opts.max_retries < 0) raise(ErrorCode::Argument, "max_retries must be >= 0");

  SemanticInterpretation si;
  si.target_id = bundle.target_id;
  si.kind = bundle.target_kind;
  si.backend_id = backend.backend_id();
  si.attempt = opts.attempt;
  si.prompt_hash = bundle.content_hash;

  if (auto cached = cache.lookup(si.backend_id, bundle.content_hash, opts.decode, opts.attempt)) {
    if (counters != nullptr) ++counters->cache_hits;
    si.text = *cached;
    if (si.text.empty()) raise(ErrorCode::Parse, "cached response is empty: " + si.target_id);
    return si;
  }

  const auto sleep_ms = opts.sleep_ms
                            ? opts.sleep_ms
                            : [](double ms) {
                                std::this_thread::sleep_for(
                                    std::chrono::duration<double, std::milli>(ms));
                              };

  const std::string prompt = bundle.render();
  std::string response;
  double backoff = opts.backoff_initial_ms;
  for (int tries = 0;; ++tries) {
    try {
      if (counters != nullptr) ++counters->backend_calls;
      response = backend.generate(prompt, opts.decode);
      break;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BackendTransient) throw;
      if (tries >= opts.max_retries) {
        raise(ErrorCode::Backend, "backend retries exhausted for " + bundle.target_id + ": " +
                                      e.what());
      }
      sleep_ms(backoff);
      backoff *= 2.0;
    }
  }

  if (trim(response).empty()) {
    raise(ErrorCode::Parse, "backend returned an empty response for " + bundle.target_id);
  }
  cache.store(si.backend_id, bundle.content_hash, opts.decode, opts.attempt, response);
  si.text = response;
  return si;
}

}  // namespace lanhar::interpret
