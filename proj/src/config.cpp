#include "lanhar/config.hpp"

#include <algorithm>
#include <set>

#include "lanhar/error.hpp"
#include "lanhar/sha256.hpp"
#include "lanhar/toml.hpp"
#include "lanhar/util.hpp"

namespace lanhar::config {

namespace {

// Expected shape of the config tree: leaf paths to type tags.
enum class Kind { Int, Float, Str, Bool };

struct Field {
  const char* path;  // dotted, with "dataset.*" for array-of-table members
  Kind kind;
};

const Field kSchema[] = {
    {"seed", Kind::Int},
    {"runs_root", Kind::Str},
    {"dataset.*.id", Kind::Str},
    {"dataset.*.path", Kind::Str},
    {"dataset.*.format", Kind::Str},
    {"preprocess.rate_hz", Kind::Float},
    {"preprocess.window_len", Kind::Int},
    {"preprocess.stride", Kind::Int},
    {"backend.kind", Kind::Str},
    {"backend.hallucination_pct", Kind::Int},
    {"backend.replay_dir", Kind::Str},
    {"backend.endpoint", Kind::Str},
    {"backend.model", Kind::Str},
    {"backend.api_key_env", Kind::Str},
    {"backend.timeout_ms", Kind::Int},
    {"backend.temperature", Kind::Float},
    {"backend.max_tokens", Kind::Int},
    {"filter.k", Kind::Int},
    {"filter.max_iterations", Kind::Int},
    {"filter.patience", Kind::Int},
    {"filter.min_rel_improvement", Kind::Float},
    {"filter.seed", Kind::Int},
    {"text.d_model", Kind::Int},
    {"text.n_layers", Kind::Int},
    {"text.n_heads", Kind::Int},
    {"text.vocab_size", Kind::Int},
    {"text.max_len", Kind::Int},
    {"text.decoder_layers", Kind::Int},
    {"text.lr", Kind::Float},
    {"text.batch_size", Kind::Int},
    {"text.epochs", Kind::Int},
    {"text.tau", Kind::Float},
    {"text.alpha", Kind::Float},
    {"text.beta", Kind::Float},
    {"text.weight_decay", Kind::Float},
    {"text.clip_norm", Kind::Float},
    {"text.val_fraction", Kind::Float},
    {"text.triple_cap", Kind::Int},
    {"sensor.d_model", Kind::Int},
    {"sensor.n_layers", Kind::Int},
    {"sensor.n_heads", Kind::Int},
    {"sensor.lr", Kind::Float},
    {"sensor.batch_size", Kind::Int},
    {"sensor.epochs", Kind::Int},
    {"sensor.tau", Kind::Float},
    {"sensor.weight_decay", Kind::Float},
    {"sensor.clip_norm", Kind::Float},
    {"sensor.val_fraction", Kind::Float},
    {"eval.source", Kind::Str},
    {"eval.target", Kind::Str},
    {"eval.label_variants", Kind::Int},
    {"eval.min_similarity", Kind::Float},
};

const Field* schema_lookup(const std::string& path) {
  for (const auto& f : kSchema)
    if (path == f.path) return &f;
  return nullptr;
}

bool kind_matches(Kind kind, const nlohmann::ordered_json& v) {
  switch (kind) {
    case Kind::Int: return v.is_number_integer();
    case Kind::Float: return v.is_number();  // integers accepted where floats expected
    case Kind::Str: return v.is_string();
    case Kind::Bool: return v.is_boolean();
  }
  return false;
}

const char* kind_name(Kind kind) {
  switch (kind) {
    case Kind::Int: return "integer";
    case Kind::Float: return "number";
    case Kind::Str: return "string";
    case Kind::Bool: return "boolean";
  }
  return "?";
}

// Collects every unknown-key / wrong-type complaint in one pass so the error
// names all offenders at once.
void check_tree(const nlohmann::ordered_json& node, const std::string& prefix,
                std::vector<std::string>& problems) {
  if (!node.is_object()) {
    problems.push_back(prefix + ": expected a table");
    return;
  }
  for (const auto& [key, value] : node.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (path == "dataset") {
      if (!value.is_array()) {
        problems.push_back(path + ": expected an array of tables");
        continue;
      }
      for (const auto& entry : value) check_tree(entry, "dataset.*", problems);
      continue;
    }
    if (value.is_object()) {
      check_tree(value, path, problems);
      continue;
    }
    const Field* field = schema_lookup(path);
    if (field == nullptr) {
      problems.push_back("unknown key: " + path);
    } else if (!kind_matches(field->kind, value)) {
      problems.push_back(path + ": expected " + kind_name(field->kind));
    }
  }
}

template <typename T>
void read_scalar(const nlohmann::ordered_json& root, const std::string& table,
                 const std::string& key, T& out) {
  if (!root.contains(table)) return;
  const auto& t = root.at(table);
  if (t.contains(key)) out = t.at(key).get<T>();
}

template <typename T>
void read_top(const nlohmann::ordered_json& root, const std::string& key, T& out) {
  if (root.contains(key)) out = root.at(key).get<T>();
}

void apply_override(nlohmann::ordered_json& root, const std::string& dotted,
                    const nlohmann::json& value) {
  const auto parts = split(dotted, '.');
  if (parts.empty() || dotted.empty())
    raise(ErrorCode::Validation, "empty override key");
  nlohmann::ordered_json* node = &root;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
      (*node)[parts[i]] = nlohmann::ordered_json::object();
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

void require(bool ok, const std::string& message, std::vector<std::string>& problems) {
  if (!ok) problems.push_back(message);
}

ExperimentConfig extract(const nlohmann::ordered_json& root) {
  std::vector<std::string> problems;
  check_tree(root, "", problems);
  if (!problems.empty()) {
    std::string joined;
    for (const auto& p : problems) joined += (joined.empty() ? "" : "; ") + p;
    raise(ErrorCode::Validation, "invalid config: " + joined);
  }

  ExperimentConfig cfg;
  {
    std::int64_t seed = 0;
    read_top(root, "seed", seed);
    if (seed < 0) raise(ErrorCode::Validation, "invalid config: seed must be non-negative");
    cfg.seed = static_cast<uint64_t>(seed);
  }
  read_top(root, "runs_root", cfg.runs_root);

  if (root.contains("dataset")) {
    for (const auto& entry : root.at("dataset")) {
      DatasetSpec ds;
      if (entry.contains("id")) ds.id = entry.at("id").get<std::string>();
      if (entry.contains("path")) ds.path = entry.at("path").get<std::string>();
      if (entry.contains("format")) ds.format = entry.at("format").get<std::string>();
      cfg.datasets.push_back(std::move(ds));
    }
  }

  read_scalar(root, "preprocess", "rate_hz", cfg.preprocess.rate_hz);
  read_scalar(root, "preprocess", "window_len", cfg.preprocess.window_len);
  read_scalar(root, "preprocess", "stride", cfg.preprocess.stride);

  read_scalar(root, "backend", "kind", cfg.backend.kind);
  read_scalar(root, "backend", "hallucination_pct", cfg.backend.hallucination_pct);
  read_scalar(root, "backend", "replay_dir", cfg.backend.replay_dir);
  read_scalar(root, "backend", "endpoint", cfg.backend.endpoint);
  read_scalar(root, "backend", "model", cfg.backend.model);
  read_scalar(root, "backend", "api_key_env", cfg.backend.api_key_env);
  read_scalar(root, "backend", "timeout_ms", cfg.backend.timeout_ms);
  read_scalar(root, "backend", "temperature", cfg.backend.temperature);
  read_scalar(root, "backend", "max_tokens", cfg.backend.max_tokens);

  read_scalar(root, "filter", "k", cfg.filter.k);
  read_scalar(root, "filter", "max_iterations", cfg.filter.max_iterations);
  read_scalar(root, "filter", "patience", cfg.filter.patience);
  read_scalar(root, "filter", "min_rel_improvement", cfg.filter.min_rel_improvement);
  {
    std::int64_t fseed = -1;
    read_scalar(root, "filter", "seed", fseed);
    // filter seed follows the top-level seed unless set explicitly
    cfg.filter.seed = fseed >= 0 ? static_cast<uint64_t>(fseed)
                                 : derive_seed(cfg.seed, "filter");
  }

  read_scalar(root, "text", "d_model", cfg.text.d_model);
  read_scalar(root, "text", "n_layers", cfg.text.n_layers);
  read_scalar(root, "text", "n_heads", cfg.text.n_heads);
  read_scalar(root, "text", "vocab_size", cfg.text.vocab_size);
  read_scalar(root, "text", "max_len", cfg.text.max_len);
  read_scalar(root, "text", "decoder_layers", cfg.text.decoder_layers);
  read_scalar(root, "text", "lr", cfg.text.lr);
  read_scalar(root, "text", "batch_size", cfg.text.batch_size);
  read_scalar(root, "text", "epochs", cfg.text.epochs);
  read_scalar(root, "text", "tau", cfg.text.tau);
  read_scalar(root, "text", "alpha", cfg.text.alpha);
  read_scalar(root, "text", "beta", cfg.text.beta);
  read_scalar(root, "text", "weight_decay", cfg.text.weight_decay);
  read_scalar(root, "text", "clip_norm", cfg.text.clip_norm);
  read_scalar(root, "text", "val_fraction", cfg.text.val_fraction);
  read_scalar(root, "text", "triple_cap", cfg.text.triple_cap);

  read_scalar(root, "sensor", "d_model", cfg.sensor.d_model);
  read_scalar(root, "sensor", "n_layers", cfg.sensor.n_layers);
  read_scalar(root, "sensor", "n_heads", cfg.sensor.n_heads);
  read_scalar(root, "sensor", "lr", cfg.sensor.lr);
  read_scalar(root, "sensor", "batch_size", cfg.sensor.batch_size);
  read_scalar(root, "sensor", "epochs", cfg.sensor.epochs);
  read_scalar(root, "sensor", "tau", cfg.sensor.tau);
  read_scalar(root, "sensor", "weight_decay", cfg.sensor.weight_decay);
  read_scalar(root, "sensor", "clip_norm", cfg.sensor.clip_norm);
  read_scalar(root, "sensor", "val_fraction", cfg.sensor.val_fraction);

  read_scalar(root, "eval", "source", cfg.eval.source);
  read_scalar(root, "eval", "target", cfg.eval.target);
  read_scalar(root, "eval", "label_variants", cfg.eval.label_variants);
  if (root.contains("eval") && root.at("eval").contains("min_similarity"))
    cfg.eval.min_similarity = root.at("eval").at("min_similarity").get<double>();

  // Range validation, again all at once.
  std::set<std::string> ids;
  for (std::size_t i = 0; i < cfg.datasets.size(); ++i) {
    const auto& ds = cfg.datasets[i];
    const std::string at = "dataset[" + std::to_string(i) + "]";
    require(!ds.id.empty(), at + ".id must be non-empty", problems);
    require(ds.id.find('/') == std::string::npos && ds.id.find("..") == std::string::npos,
            at + ".id must not contain path separators", problems);
    require(!ds.path.empty(), at + ".path must be non-empty", problems);
    require(ds.format.empty() || ds.format == "csv" || ds.format == "jsonl",
            at + ".format must be csv or jsonl", problems);
    require(ids.insert(ds.id).second, at + ".id duplicates " + ds.id, problems);
  }
  require(cfg.preprocess.rate_hz > 0, "preprocess.rate_hz must be positive", problems);
  require(cfg.preprocess.window_len >= 8, "preprocess.window_len must be at least 8", problems);
  require(cfg.preprocess.stride >= 1, "preprocess.stride must be at least 1", problems);
  require(cfg.backend.kind == "mock" || cfg.backend.kind == "replay" || cfg.backend.kind == "http",
          "backend.kind must be mock, replay or http", problems);
  require(cfg.backend.hallucination_pct >= 0 && cfg.backend.hallucination_pct <= 100,
          "backend.hallucination_pct must be in [0,100]", problems);
  require(cfg.backend.kind != "replay" || !cfg.backend.replay_dir.empty(),
          "backend.replay_dir required for the replay backend", problems);
  require(cfg.backend.kind != "http" || !cfg.backend.endpoint.empty(),
          "backend.endpoint required for the http backend", problems);
  require(cfg.backend.timeout_ms > 0, "backend.timeout_ms must be positive", problems);
  require(cfg.backend.temperature >= 0, "backend.temperature must be non-negative", problems);
  require(cfg.backend.max_tokens > 0, "backend.max_tokens must be positive", problems);
  require(cfg.filter.k >= 1, "filter.k must be at least 1", problems);
  require(cfg.filter.max_iterations >= 1, "filter.max_iterations must be at least 1", problems);
  require(cfg.filter.patience >= 1, "filter.patience must be at least 1", problems);
  require(cfg.filter.min_rel_improvement >= 0, "filter.min_rel_improvement must be non-negative",
          problems);
  const auto check_stage = [&](const std::string& name, int d, int layers, int heads, double lr,
                               int batch, int epochs, double tau, double wd, double clip,
                               double vf) {
    require(d >= 8, name + ".d_model must be at least 8", problems);
    require(heads >= 1, name + ".n_heads must be at least 1", problems);
    require(heads == 0 || d % heads == 0, name + ".d_model must be divisible by n_heads",
            problems);
    require(layers >= 1, name + ".n_layers must be at least 1", problems);
    require(lr > 0, name + ".lr must be positive", problems);
    require(batch >= 2, name + ".batch_size must be at least 2", problems);
    require(epochs >= 1, name + ".epochs must be at least 1", problems);
    require(tau > 0, name + ".tau must be positive", problems);
    require(wd >= 0, name + ".weight_decay must be non-negative", problems);
    require(clip > 0, name + ".clip_norm must be positive", problems);
    require(vf >= 0 && vf < 1, name + ".val_fraction must be in [0,1)", problems);
  };
  check_stage("text", cfg.text.d_model, cfg.text.n_layers, cfg.text.n_heads, cfg.text.lr,
              cfg.text.batch_size, cfg.text.epochs, cfg.text.tau, cfg.text.weight_decay,
              cfg.text.clip_norm, cfg.text.val_fraction);
  require(cfg.text.vocab_size >= 64, "text.vocab_size must be at least 64", problems);
  require(cfg.text.max_len >= 8, "text.max_len must be at least 8", problems);
  require(cfg.text.decoder_layers >= 1, "text.decoder_layers must be at least 1", problems);
  require(cfg.text.alpha >= 0, "text.alpha must be non-negative", problems);
  require(cfg.text.beta >= 0, "text.beta must be non-negative", problems);
  require(cfg.text.triple_cap >= 1, "text.triple_cap must be at least 1", problems);
  check_stage("sensor", cfg.sensor.d_model, cfg.sensor.n_layers, cfg.sensor.n_heads,
              cfg.sensor.lr, cfg.sensor.batch_size, cfg.sensor.epochs, cfg.sensor.tau,
              cfg.sensor.weight_decay, cfg.sensor.clip_norm, cfg.sensor.val_fraction);
  require(cfg.eval.label_variants >= 1, "eval.label_variants must be at least 1", problems);
  if (cfg.eval.min_similarity)
    require(*cfg.eval.min_similarity >= -1.0 && *cfg.eval.min_similarity <= 1.0,
            "eval.min_similarity must be in [-1,1]", problems);

  if (!problems.empty()) {
    std::string joined;
    for (const auto& p : problems) joined += (joined.empty() ? "" : "; ") + p;
    raise(ErrorCode::Validation, "invalid config: " + joined);
  }
  return cfg;
}

}  // namespace

nlohmann::json ExperimentConfig::normalized() const {
  nlohmann::json doc;  // plain json sorts keys alphabetically
  doc["seed"] = seed;
  doc["datasets"] = nlohmann::json::array();
  for (const auto& ds : datasets)
    doc["datasets"].push_back({{"id", ds.id}, {"path", ds.path}, {"format", ds.format}});
  doc["preprocess"] = {{"rate_hz", preprocess.rate_hz},
                       {"window_len", preprocess.window_len},
                       {"stride", preprocess.stride}};
  doc["backend"] = {{"kind", backend.kind},
                    {"hallucination_pct", backend.hallucination_pct},
                    {"replay_dir", backend.replay_dir},
                    {"endpoint", backend.endpoint},
                    {"model", backend.model},
                    {"api_key_env", backend.api_key_env},
                    {"timeout_ms", backend.timeout_ms},
                    {"temperature", backend.temperature},
                    {"max_tokens", backend.max_tokens}};
  doc["filter"] = {{"k", filter.k},
                   {"max_iterations", filter.max_iterations},
                   {"patience", filter.patience},
                   {"min_rel_improvement", filter.min_rel_improvement},
                   {"seed", filter.seed}};
  doc["text"] = {{"d_model", text.d_model},
                 {"n_layers", text.n_layers},
                 {"n_heads", text.n_heads},
                 {"vocab_size", text.vocab_size},
                 {"max_len", text.max_len},
                 {"decoder_layers", text.decoder_layers},
                 {"lr", text.lr},
                 {"batch_size", text.batch_size},
                 {"epochs", text.epochs},
                 {"tau", text.tau},
                 {"alpha", text.alpha},
                 {"beta", text.beta},
                 {"weight_decay", text.weight_decay},
                 {"clip_norm", text.clip_norm},
                 {"val_fraction", text.val_fraction},
                 {"triple_cap", text.triple_cap}};
  doc["sensor"] = {{"d_model", sensor.d_model},
                   {"n_layers", sensor.n_layers},
                   {"n_heads", sensor.n_heads},
                   {"lr", sensor.lr},
                   {"batch_size", sensor.batch_size},
                   {"epochs", sensor.epochs},
                   {"tau", sensor.tau},
                   {"weight_decay", sensor.weight_decay},
                   {"clip_norm", sensor.clip_norm},
                   {"val_fraction", sensor.val_fraction}};
  doc["eval"] = {{"source", eval.source},
                 {"target", eval.target},
                 {"label_variants", eval.label_variants}};
  if (eval.min_similarity) doc["eval"]["min_similarity"] = *eval.min_similarity;
  return doc;
}

std::string ExperimentConfig::fingerprint() const {
  return sha256_hex(normalized().dump()).substr(0, 16);
}

const DatasetSpec& ExperimentConfig::dataset(const std::string& id) const {
  for (const auto& ds : datasets)
    if (ds.id == id) return ds;
  raise(ErrorCode::Argument, "dataset not configured: " + id);
}

ExperimentConfig parse_config(std::string_view text, const nlohmann::json& overrides) {
  nlohmann::ordered_json root = toml::parse(text);
  if (!overrides.is_object())
    raise(ErrorCode::Validation, "config overrides must be a JSON object");
  for (const auto& [key, value] : overrides.items()) apply_override(root, key, value);
  return extract(root);
}

ExperimentConfig load_config(const std::filesystem::path& path, const nlohmann::json& overrides) {
  return parse_config(read_text_file(path), overrides);
}

}  // namespace lanhar::config
