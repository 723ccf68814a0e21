#include <algorithm>

#include "lanhar/error.hpp"
#include "lanhar/interpret.hpp"
#include "lanhar/sha256.hpp"
#include "lanhar/util.hpp"

#include <httplib.h>

namespace lanhar::interpret {

namespace {

constexpr const char* kRegenMarker = "This is your previous response to the task.";
constexpr const char* kLabelRequestMarker = "Generate a description of the activity \"";
constexpr const char* kStatsMarker = "{\"mean_ax\"";

// Banded vocabulary shared between sensor renderings and the label knowledge
// table; the overlap is what lets embeddings of a window and its activity's
// description land near each other.
struct BandReading {
  std::string rhythm;      // accelerometer band sentence fragment
  std::string regime;      // amplitude regime fragment
  std::string extra;       // stillness / gravity / stairs cue, may be empty
  std::string gyro;        // full gyroscope sentence
  std::string conclusion;  // full closing sentence
};

BandReading read_bands(const stats::WindowStats& s) {
  int accel = 0;
  for (int c = 1; c < 3; ++c) {
    if (s.amplitude[static_cast<size_t>(c)] > s.amplitude[static_cast<size_t>(accel)]) accel = c;
  }
  const double amp_a = s.amplitude[static_cast<size_t>(accel)];
  const double freq = s.dominant_freq_hz[static_cast<size_t>(accel)];
  double amp_g = 0.0;
  for (int c = 3; c < kNumChannels; ++c) {
    amp_g = std::max(amp_g, s.amplitude[static_cast<size_t>(c)]);
  }

  BandReading b;
  if (amp_g < 0.3) {
    b.gyro = "The gyroscope stays near zero.";
  } else if (amp_g < 2.0) {
    b.gyro = "The gyroscope registers smooth continuous rotation.";
  } else if (amp_g < 5.0) {
    b.gyro = "The gyroscope registers regular leg swing rotation.";
  } else {
    b.gyro = "The gyroscope registers rapid strong rotation.";
  }

  if (amp_a < 0.5) {
    b.rhythm = "an essentially static signal";
    b.regime = "minimal movement amplitude";
    // Orientation separates horizontal rest from upright stillness; residual
    // sway separates relaxed sitting from standing.
    int grav = 0;
    for (int c = 1; c < 3; ++c) {
      if (std::abs(s.mean[static_cast<size_t>(c)]) > std::abs(s.mean[static_cast<size_t>(grav)])) {
        grav = c;
      }
    }
    if (grav != 2) {
      b.extra = "gravity along a horizontal body axis, consistent with resting horizontally";
      b.conclusion = "This pattern suggests a stationary posture, reclining at rest.";
    } else if (amp_a < 0.18) {
      b.extra = "almost perfectly still";
      b.conclusion = "This pattern suggests a stationary resting posture on a seat.";
    } else {
      b.extra = "small postural sway";
      b.conclusion = "This pattern suggests a stationary upright posture.";
    }
    return b;
  }

  if (freq < 1.2) {
    b.rhythm = "a slow smooth rhythm";
  } else if (freq < 2.6) {
    b.rhythm = "a walking-band rhythm";
  } else {
    b.rhythm = "a vigorous fast rhythm";
  }

  if (amp_a < 4.0) {
    b.regime = "moderate movement amplitude";
  } else if (amp_a < 8.0) {
    b.regime = "elevated movement amplitude";
  } else {
    b.regime = "intense movement amplitude";
  }

  const bool walking_band = freq >= 1.2 && freq < 2.6;
  const bool elevated = amp_a >= 4.0 && amp_a < 8.0;
  if (walking_band && elevated) {
    if (s.mean[2] > 9.81) {
      b.extra = "extra effort working against gravity";
      b.conclusion = "This pattern suggests stepwise climbing effort against gravity.";
    } else {
      b.extra = "repeated impacts absorbed on each step";
      b.conclusion = "This pattern suggests stepwise descent with impact absorption.";
    }
  } else if (b.rhythm == "a vigorous fast rhythm" || b.regime == "intense movement amplitude") {
    b.extra = "strong impacts";
    b.conclusion = "This pattern suggests energetic running-like locomotion.";
  } else if (walking_band) {
    b.extra = "a clear periodic gait cycle";
    b.conclusion = "This pattern suggests steady locomotion at a comfortable cadence.";
  } else {
    b.extra = "smooth cyclic lower-body motion at low cadence";
    b.conclusion = "This pattern suggests pedaling-like cyclic motion.";
  }
  return b;
}

std::string extract_previous_response(const std::string& prompt) {
  const std::string marker = "Previous response:\n";
  const auto at = prompt.find(marker);
  if (at == std::string::npos) return {};
  std::string rest = prompt.substr(at + marker.size());
  // The embedded response ends where the next section (or end of prompt) begins.
  const auto next = rest.find("\n\n## ");
  if (next != std::string::npos) rest = rest.substr(0, next);
  return trim(rest);
}

std::optional<stats::WindowStats> extract_stats(const std::string& prompt) {
  const auto at = prompt.find(kStatsMarker);
  if (at == std::string::npos) return std::nullopt;
  const auto end = prompt.find('}', at);
  if (end == std::string::npos) return std::nullopt;
  try {
    return stats::stats_from_json(nlohmann::json::parse(prompt.substr(at, end - at + 1)));
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

// Three-sentence descriptions assembled so variants can reorder them.
struct LabelSentences {
  std::string overview;
  std::string sensors;
  std::string body;
};

const std::map<std::string, LabelSentences>& label_sentences() {
  static const std::map<std::string, LabelSentences> table = {
      {"walking",
       {"Walking is steady locomotion at a comfortable cadence.",
        "The accelerometer shows a walking-band rhythm with moderate movement amplitude and a "
        "clear periodic gait cycle, while the gyroscope registers regular leg swing rotation.",
        "The legs, hips, and swinging arms carry the motion."}},
      {"jogging",
       {"Jogging is energetic running-like locomotion.",
        "The accelerometer shows a vigorous fast rhythm with intense movement amplitude and "
        "strong impacts, while the gyroscope registers rapid strong rotation.",
        "The legs, knees, and arms drive the motion."}},
      {"biking",
       {"Biking is pedaling a bicycle with smooth cyclic lower-body motion at low cadence.",
        "The accelerometer shows a slow smooth rhythm with moderate movement amplitude, while "
        "the gyroscope registers smooth continuous rotation.",
        "The legs and knees turn the pedals in a pedaling-like cyclic motion."}},
      {"sitting",
       {"Sitting is a stationary resting posture on a seat.",
        "The accelerometer shows an essentially static signal with minimal movement amplitude, "
        "almost perfectly still, and the gyroscope stays near zero.",
        "The body is supported with the torso upright and relaxed."}},
      {"standing",
       {"Standing is a stationary upright posture.",
        "The accelerometer shows an essentially static signal with minimal movement amplitude "
        "and small postural sway, and the gyroscope stays near zero.",
        "The legs support the body while the torso stays upright."}},
      {"lying",
       {"Lying is a stationary posture reclining at rest.",
        "The accelerometer shows an essentially static signal with minimal movement amplitude "
        "and gravity along a horizontal body axis, consistent with resting horizontally, and the "
        "gyroscope stays near zero.",
        "The whole body reclines horizontally at rest."}},
      {"going_upstairs",
       {"Going upstairs is stepwise climbing effort against gravity.",
        "The accelerometer shows a walking-band rhythm with elevated movement amplitude and "
        "extra effort working against gravity, while the gyroscope registers regular leg swing "
        "rotation.",
        "The legs, knees, and hips lift the body on each step."}},
      {"going_downstairs",
       {"Going downstairs is stepwise descent with impact absorption.",
        "The accelerometer shows a walking-band rhythm with elevated movement amplitude and "
        "repeated impacts absorbed on each step, while the gyroscope registers regular leg swing "
        "rotation.",
        "The legs and knees absorb the landing of each step."}},
  };
  return table;
}

std::string assemble_label_text(const LabelSentences& s, int variant) {
  static const char* openers[3] = {"", "In practice, ", "Typically, "};
  const std::string parts[3] = {s.overview, s.sensors, s.body};
  const int rot = variant % 3;
  std::string out = openers[static_cast<size_t>(rot)];
  for (int i = 0; i < 3; ++i) {
    if (i > 0) out += " ";
    out += parts[(i + rot) % 3];
  }
  return out;
}

std::string hallucinated_text() {
  return "The accelerometer shows a vigorous fast rhythm with minimal movement amplitude in an "
         "erratic aperiodic burst that contradicts the computed statistics. The gyroscope "
         "readings flip sign randomly. This pattern suggests chaotic unclassifiable motion.";
}

}  // namespace

MockBackend::MockBackend(MockBackendConfig cfg) : cfg_(cfg) {
  if (cfg_.hallucination_pct < 0 || cfg_.hallucination_pct > 100) {
    raise(ErrorCode::Argument, "hallucination percentage must be in [0, 100]");
  }
}

std::string MockBackend::describe_stats(const stats::WindowStats& s) {
  const BandReading b = read_bands(s);
  std::string out = "The accelerometer shows " + b.rhythm + " with " + b.regime;
  if (!b.extra.empty()) out += " and " + b.extra;
  out += ". " + b.gyro + " " + b.conclusion;
  return out;
}

const std::map<std::string, std::string>& MockBackend::label_knowledge() {
  static const std::map<std::string, std::string> table = [] {
    std::map<std::string, std::string> out;
    for (const auto& [label, sentences] : label_sentences()) {
      out[label] = assemble_label_text(sentences, 0);
    }
    return out;
  }();
  return table;
}

std::string MockBackend::generate(const std::string& prompt, const DecodeParams&) {
  ++calls_;
  const bool is_regen = prompt.find(kRegenMarker) != std::string::npos;

  // Label request: answer from the knowledge table, honoring variant phrasing.
  const auto label_at = prompt.find(kLabelRequestMarker);
  if (label_at != std::string::npos && !is_regen) {
    const auto start = label_at + std::string(kLabelRequestMarker).size();
    const auto end = prompt.find('"', start);
    if (end == std::string::npos) raise(ErrorCode::Backend, "malformed label request");
    const std::string label = prompt.substr(start, end - start);
    const auto it = label_sentences().find(label);
    if (it == label_sentences().end()) {
      raise(ErrorCode::Backend, "mock backend has no knowledge of label: " + label);
    }
    int variant = 0;
    const std::string vmarker = "Provide phrasing variant ";
    const auto vat = prompt.find(vmarker);
    if (vat != std::string::npos) {
      variant = std::atoi(prompt.c_str() + vat + vmarker.size());
    }
    return assemble_label_text(it->second, variant);
  }

  // Sensor prompt (or regen of one): render the embedded statistics.
  if (auto s = extract_stats(prompt)) {
    if (!is_regen && cfg_.hallucination_pct > 0) {
      const uint64_t key =
          fnv1a64(prompt) ^ (0x9e3779b97f4a7c15ULL * (cfg_.seed + 1));
      if (key % 100 < static_cast<uint64_t>(cfg_.hallucination_pct)) {
        return hallucinated_text();
      }
    }
    return describe_stats(*s);
  }

  // Regen of a label prompt: the original task section is gone, so recover the
  // label from the embedded previous response.
  if (is_regen) {
    const std::string prev = to_lower(extract_previous_response(prompt));
    for (const auto& [label, sentences] : label_sentences()) {
      std::string phrase = label;
      std::replace(phrase.begin(), phrase.end(), '_', ' ');
      if (prev.find(phrase) != std::string::npos) {
        return assemble_label_text(sentences, 0);
      }
    }
    return "The previous response does not match any known activity; no correction is possible.";
  }

  return "The prompt does not match a supported template.";
}

ReplayBackend::ReplayBackend(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!std::filesystem::is_directory(dir_)) {
    raise(ErrorCode::Validation, "replay directory does not exist: " + dir_.string());
  }
}

void ReplayBackend::record(const std::filesystem::path& dir, const std::string& prompt,
                           const std::string& response) {
  ensure_directory(dir);
  nlohmann::ordered_json doc{{"prompt_hash", sha256_hex(prompt)}, {"response", response}};
  write_text_file_atomic(dir / (sha256_hex(prompt) + ".json"), doc.dump(2) + "\n");
}

std::string ReplayBackend::generate(const std::string& prompt, const DecodeParams&) {
  const auto path = dir_ / (sha256_hex(prompt) + ".json");
  if (!std::filesystem::exists(path)) {
    raise(ErrorCode::Backend, "no recorded response for this prompt under " + dir_.string());
  }
  try {
    return nlohmann::json::parse(read_text_file(path)).at("response").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Parse, "corrupt replay record " + path.string() + ": " + e.what());
  }
}

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
  id_ = cfg_.model.empty() ? "http" : "http_" + cfg_.model;
  if (cfg_.endpoint.rfind("http://", 0) != 0) {
    raise(ErrorCode::Validation,
          "backend endpoint must be an http:// URL, got: " + cfg_.endpoint);
  }
  const auto path_at = cfg_.endpoint.find('/', std::string("http://").size());
  if (path_at == std::string::npos) {
    host_ = cfg_.endpoint;
    path_ = "/";
  } else {
    host_ = cfg_.endpoint.substr(0, path_at);
    path_ = cfg_.endpoint.substr(path_at);
  }
  const char* key = std::getenv(cfg_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    raise(ErrorCode::Validation,
          "API key environment variable is not set: " + cfg_.api_key_env);
  }
  api_key_ = key;
}

std::string HttpBackend::generate(const std::string& prompt, const DecodeParams& decode) {
  httplib::Client client(host_);
  client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
  client.set_read_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);
  httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
  nlohmann::ordered_json body{{"model", cfg_.model},
                              {"prompt", prompt},
                              {"temperature", decode.temperature},
                              {"max_tokens", decode.max_tokens}};
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) {
    raise(ErrorCode::BackendTransient,
          "no response from backend endpoint " + host_ + path_);
  }
  if (res->status == 429 || res->status >= 500) {
    raise(ErrorCode::BackendTransient,
          "backend returned status " + std::to_string(res->status));
  }
  if (res->status != 200) {
    raise(ErrorCode::Backend, "backend rejected the request with status " +
                                  std::to_string(res->status) + ": " + res->body);
  }
  try {
    return nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Parse, std::string("malformed backend response: ") + e.what());
  }
}

}  // namespace lanhar::interpret
