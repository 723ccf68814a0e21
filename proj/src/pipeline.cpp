#include "lanhar/pipeline.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "lanhar/dataset.hpp"
#include "lanhar/error.hpp"
#include "lanhar/nn/checkpoint.hpp"
#include "lanhar/util.hpp"

namespace lanhar::pipeline {

namespace fs = std::filesystem;

namespace {

std::string rel(const RunLayout& layout, const fs::path& p) {
  return p.lexically_relative(layout.root).generic_string();
}

void require_artifact(const RunLayout& layout, const fs::path& p, const std::string& what,
                      const std::string& producer) {
  if (!fs::exists(p))
    raise(ErrorCode::Dependency,
          "missing " + what + " " + rel(layout, p) + " (run " + producer + " first)");
}

fs::path windows_path(const RunLayout& l, const std::string& id) {
  return l.data / (id + ".windows.jsonl");
}
fs::path stats_path(const RunLayout& l, const std::string& id) {
  return l.data / (id + ".stats.jsonl");
}
fs::path interp_path(const RunLayout& l, const std::string& id) {
  return l.data / (id + ".interp.jsonl");
}
fs::path filtered_path(const RunLayout& l, const std::string& id) {
  return l.data / (id + ".filtered.jsonl");
}
fs::path labels_path(const RunLayout& l) { return l.data / "labels.json"; }
fs::path text_ckpt_path(const RunLayout& l) { return l.checkpoints / "text.ckpt"; }
fs::path sensor_ckpt_path(const RunLayout& l) { return l.checkpoints / "sensor.ckpt"; }
fs::path bank_path(const RunLayout& l) { return l.banks / "label_bank.bin"; }

std::vector<IMUWindow> load_ingested(const RunLayout& layout, const std::string& id) {
  const fs::path p = windows_path(layout, id);
  require_artifact(layout, p, "ingested windows", "ingest");
  return dataset::load_windows_jsonl(p);
}

void write_interps_jsonl(const fs::path& path,
                         const std::vector<interpret::SemanticInterpretation>& interps) {
  std::string body;
  for (const auto& si : interps) body += si.to_json().dump() + "\n";
  write_text_file_atomic(path, body);
}

std::vector<interpret::SemanticInterpretation> load_interps_jsonl(const fs::path& path) {
  std::vector<interpret::SemanticInterpretation> out;
  for (const auto& line : split(read_text_file(path), '\n')) {
    if (trim(line).empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      raise(ErrorCode::Parse,
            "malformed interpretation line in " + path.string() + ": " + e.what());
    }
    out.push_back(interpret::SemanticInterpretation::from_json(doc));
  }
  return out;
}

// Reorders a loaded interpretation file to match the window order.
std::vector<interpret::SemanticInterpretation> align_interps(
    const RunLayout& layout, const std::vector<IMUWindow>& windows,
    const std::vector<interpret::SemanticInterpretation>& interps, const fs::path& source_file) {
  std::map<std::string, const interpret::SemanticInterpretation*> by_id;
  for (const auto& si : interps) by_id[si.target_id] = &si;
  std::vector<interpret::SemanticInterpretation> aligned;
  aligned.reserve(windows.size());
  for (const auto& w : windows) {
    auto it = by_id.find(w.window_id);
    if (it == by_id.end())
      raise(ErrorCode::Dependency, "missing interpretation for window " + w.window_id + " in " +
                                       rel(layout, source_file) + " (re-run interpret)");
    aligned.push_back(*it->second);
  }
  return aligned;
}

text::TextEncoderConfig embedder_config(const config::ExperimentConfig& cfg) {
  text::TextEncoderConfig ec;
  ec.vocab_size = cfg.text.vocab_size;
  ec.d_model = cfg.text.d_model;
  ec.n_layers = cfg.text.n_layers;
  ec.n_heads = cfg.text.n_heads;
  ec.max_len = cfg.text.max_len;
  ec.seed = derive_seed(cfg.seed, "filter_embedder");
  return ec;
}

interpret::DecodeParams decode_params(const config::ExperimentConfig& cfg) {
  interpret::DecodeParams d;
  d.temperature = cfg.backend.temperature;
  d.max_tokens = cfg.backend.max_tokens;
  return d;
}

nlohmann::ordered_json label_histogram(const std::vector<IMUWindow>& windows) {
  std::map<std::string, long> hist;
  for (const auto& w : windows) ++hist[w.label ? *w.label : "(unlabeled)"];
  nlohmann::ordered_json doc;
  for (const auto& [label, n] : hist) doc[label] = n;
  return doc;
}

std::vector<std::string> labels_of(const std::vector<IMUWindow>& windows) {
  std::set<std::string> set;
  for (const auto& w : windows)
    if (w.label) set.insert(*w.label);
  return {set.begin(), set.end()};
}

void amend_sidecar(const fs::path& archive, const std::string& fingerprint) {
  nlohmann::ordered_json doc =
      nlohmann::ordered_json::parse(nn::read_sidecar(archive).dump());
  doc["config_fingerprint"] = fingerprint;
  nn::write_sidecar(archive, doc);
}

}  // namespace

RunLayout RunLayout::create(const config::ExperimentConfig& cfg) {
  RunLayout l;
  l.root = fs::path(cfg.runs_root) / cfg.fingerprint();
  l.data = l.root / "data";
  l.cache = l.root / "cache";
  l.checkpoints = l.root / "checkpoints";
  l.banks = l.root / "banks";
  l.reports = l.root / "reports";
  for (const auto& d : {l.root, l.data, l.cache, l.checkpoints, l.banks, l.reports})
    ensure_directory(d);
  return l;
}

std::unique_ptr<interpret::LLMBackend> make_backend(const config::BackendConfig& cfg) {
  if (cfg.kind == "mock") {
    interpret::MockBackendConfig mc;
    mc.hallucination_pct = cfg.hallucination_pct;
    return std::make_unique<interpret::MockBackend>(mc);
  }
  if (cfg.kind == "replay") return std::make_unique<interpret::ReplayBackend>(cfg.replay_dir);
  if (cfg.kind == "http") {
    interpret::HttpBackendConfig hc;
    hc.endpoint = cfg.endpoint;
    hc.model = cfg.model;
    hc.api_key_env = cfg.api_key_env;
    hc.timeout_ms = cfg.timeout_ms;
    return std::make_unique<interpret::HttpBackend>(hc);
  }
  raise(ErrorCode::Validation, "unknown backend kind: " + cfg.kind);
}

std::vector<IMUWindow> ingest_dataset(const config::DatasetSpec& ds,
                                      const config::PreprocessConfig& pre) {
  std::string format = ds.format;
  if (format.empty()) {
    const std::string ext = fs::path(ds.path).extension().string();
    if (ext == ".csv") format = "csv";
    else if (ext == ".jsonl") format = "jsonl";
    else
      raise(ErrorCode::Validation,
            "cannot infer format of " + ds.path + "; set dataset.format to csv or jsonl");
  }
  const auto file_format = format == "csv" ? dataset::FileFormat::CanonicalCsv
                                           : dataset::FileFormat::CanonicalJsonl;
  const auto streams = dataset::load_dataset(ds.path, file_format);
  std::vector<IMUWindow> windows;
  for (const auto& stream : streams) {
    const auto uniform = dataset::resample(stream, pre.rate_hz);
    auto cut = dataset::make_windows(uniform, pre.window_len, pre.stride);
    windows.insert(windows.end(), cut.begin(), cut.end());
  }
  for (auto& w : windows) {
    if (w.dataset_id != ds.id) {
      w.window_id = ds.id + ":" + w.window_id;
      w.dataset_id = ds.id;
    }
  }
  if (windows.empty())
    raise(ErrorCode::Validation,
          "dataset " + ds.id + " produced no windows (check window_len and stride)");
  return windows;
}

InterpretedCorpus interpret_dataset(const std::vector<IMUWindow>& windows,
                                    interpret::LLMBackend& backend,
                                    interpret::ResponseCache& cache,
                                    const interpret::DecodeParams& decode,
                                    interpret::InterpretCounters* counters) {
  InterpretedCorpus corpus;
  corpus.windows = windows;
  corpus.stats.reserve(windows.size());
  corpus.interps.reserve(windows.size());
  interpret::GenerateOptions opts;
  opts.decode = decode;
  for (const auto& w : windows) {
    corpus.stats.push_back(stats::compute_stats(w));
    const auto bundle = interpret::build_sensor_prompt(w, corpus.stats.back(), {});
    corpus.interps.push_back(
        interpret::generate_interpretation(bundle, backend, cache, opts, counters));
  }
  return corpus;
}

std::map<std::string, std::vector<std::string>> label_interpretations(
    const std::vector<std::string>& labels, int variants, interpret::LLMBackend& backend,
    interpret::ResponseCache& cache, const interpret::DecodeParams& decode,
    interpret::InterpretCounters* counters) {
  if (variants < 1) raise(ErrorCode::Argument, "label variants must be at least 1");
  interpret::GenerateOptions opts;
  opts.decode = decode;
  std::map<std::string, std::vector<std::string>> texts;
  for (const auto& label : labels) {
    auto& list = texts[label];
    for (int v = 0; v < variants; ++v) {
      const auto bundle = interpret::build_label_prompt(label, v);
      list.push_back(
          interpret::generate_interpretation(bundle, backend, cache, opts, counters).text);
    }
  }
  return texts;
}

FilterOutcome filter_corpus(const InterpretedCorpus& corpus, const text::TextEncoder& embedder,
                            interpret::LLMBackend& backend, interpret::ResponseCache& cache,
                            const interpret::DecodeParams& decode,
                            const filter::FilterConfig& fcfg,
                            interpret::InterpretCounters* counters) {
  if (corpus.windows.size() != corpus.interps.size() ||
      corpus.windows.size() != corpus.stats.size())
    raise(ErrorCode::Argument, "corpus rows are not aligned");

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.windows.size(); ++i)
    if (!index.emplace(corpus.windows[i].window_id, i).second)
      raise(ErrorCode::Validation, "duplicate window id: " + corpus.windows[i].window_id);

  filter::InterpretationCorpus groups;
  for (std::size_t i = 0; i < corpus.windows.size(); ++i)
    if (corpus.windows[i].label) groups[*corpus.windows[i].label].push_back(corpus.interps[i]);

  const auto embed = [&embedder](const std::string& text) { return embedder.encode(text); };
  const auto regen = [&](const std::string& id) {
    const std::size_t i = index.at(id);
    const auto bundle =
        interpret::build_sensor_prompt(corpus.windows[i], corpus.stats[i], {});
    const auto regen_bundle = interpret::build_regen_prompt(bundle, corpus.interps[i].text);
    interpret::GenerateOptions opts;
    opts.decode = decode;
    opts.attempt = corpus.interps[i].attempt + 1;
    return interpret::generate_interpretation(regen_bundle, backend, cache, opts, counters);
  };

  FilterOutcome outcome;
  outcome.result = filter::run_filter(groups, fcfg, regen, embed);
  outcome.interps = corpus.interps;
  for (const auto& [activity, list] : outcome.result.corpus)
    for (const auto& si : list) outcome.interps[index.at(si.target_id)] = si;
  return outcome;
}

TextStageOutcome train_text_stage(const std::vector<train::TrainPair>& pairs,
                                  const config::ExperimentConfig& cfg, uint64_t seed_base,
                                  const std::filesystem::path& checkpoint_path,
                                  const std::filesystem::path& metrics_path) {
  if (pairs.empty()) raise(ErrorCode::Argument, "no training pairs");
  text::TextEncoderConfig ec;
  ec.vocab_size = cfg.text.vocab_size;
  ec.d_model = cfg.text.d_model;
  ec.n_layers = cfg.text.n_layers;
  ec.n_heads = cfg.text.n_heads;
  ec.max_len = cfg.text.max_len;
  ec.seed = derive_seed(seed_base, "text_encoder");
  text::TextDecoderConfig dc;
  dc.vocab_size = cfg.text.vocab_size;
  dc.d_model = cfg.text.d_model;
  dc.n_layers = cfg.text.decoder_layers;
  dc.n_heads = cfg.text.n_heads;
  dc.max_len = cfg.text.max_len;
  dc.seed = derive_seed(seed_base, "text_decoder");
  text::TextEncoder encoder(ec);
  text::TextDecoder decoder(dc);

  train::TrainConfig tc;
  tc.tau = cfg.text.tau;
  tc.alpha = cfg.text.alpha;
  tc.beta = cfg.text.beta;
  tc.lr = cfg.text.lr;
  tc.weight_decay = cfg.text.weight_decay;
  tc.clip_norm = cfg.text.clip_norm;
  tc.batch_size = cfg.text.batch_size;
  tc.epochs = cfg.text.epochs;
  tc.seed = derive_seed(seed_base, "text_train");
  tc.val_fraction = cfg.text.val_fraction;
  tc.triple_cap = cfg.text.triple_cap;

  TextStageOutcome outcome;
  outcome.result = train::train_text_encoder(encoder, decoder, pairs, tc,
                                             CategoryTable::defaults(), checkpoint_path,
                                             metrics_path);
  amend_sidecar(checkpoint_path, cfg.fingerprint());
  outcome.checkpoint_id = nn::checkpoint_id(checkpoint_path);
  return outcome;
}

SensorStageOutcome train_sensor_stage(const std::vector<IMUWindow>& windows,
                                      const std::vector<std::string>& interpretation_texts,
                                      const text::TextEncoder& text_encoder,
                                      const std::string& text_checkpoint_id,
                                      const config::ExperimentConfig& cfg, uint64_t seed_base,
                                      const std::filesystem::path& checkpoint_path,
                                      const std::filesystem::path& metrics_path) {
  if (windows.empty()) raise(ErrorCode::Argument, "no training windows");
  if (windows.size() != interpretation_texts.size())
    raise(ErrorCode::Argument, "windows and interpretation texts differ in length");

  sensor::Normalizer normalizer;
  normalizer.fit(windows);
  const auto targets = text_encoder.encode_batch(interpretation_texts);

  sensor::SensorEncoderConfig sc;
  sc.d_model = cfg.sensor.d_model;
  sc.n_layers = cfg.sensor.n_layers;
  sc.n_heads = cfg.sensor.n_heads;
  sc.window_len = cfg.preprocess.window_len;
  sc.seed = derive_seed(seed_base, "sensor_encoder");
  sensor::SensorEncoder encoder(sc);

  sensor::SensorTrainConfig stc;
  stc.tau = cfg.sensor.tau;
  stc.lr = cfg.sensor.lr;
  stc.weight_decay = cfg.sensor.weight_decay;
  stc.clip_norm = cfg.sensor.clip_norm;
  stc.batch_size = cfg.sensor.batch_size;
  stc.epochs = cfg.sensor.epochs;
  stc.seed = derive_seed(seed_base, "sensor_train");
  stc.val_fraction = cfg.sensor.val_fraction;

  SensorStageOutcome outcome;
  outcome.result = sensor::train_sensor_encoder(encoder, windows, targets, normalizer, stc,
                                                checkpoint_path, metrics_path,
                                                text_checkpoint_id);
  amend_sidecar(checkpoint_path, cfg.fingerprint());
  outcome.checkpoint_id = nn::checkpoint_id(checkpoint_path);
  return outcome;
}

infer::LabelBank assemble_bank(const std::vector<std::string>& labels,
                               const std::map<std::string, std::vector<std::string>>& label_texts,
                               const text::TextEncoder& encoder,
                               const std::string& text_checkpoint_id) {
  std::vector<infer::LabelDescriptions> descs;
  for (const auto& label : labels) {
    auto it = label_texts.find(label);
    if (it == label_texts.end() || it->second.empty())
      raise(ErrorCode::Dependency,
            "no description texts for label " + label + " (run interpret first)");
    descs.push_back({label, it->second});
  }
  return infer::build_label_bank(descs, encoder, CategoryTable::defaults(), text_checkpoint_id);
}

SettingOutcome run_setting(const config::ExperimentConfig& cfg, const RunLayout& layout,
                           const std::map<std::string, std::vector<IMUWindow>>& corpus,
                           const std::string& source, const std::string& target,
                           interpret::LLMBackend& backend, interpret::ResponseCache& cache,
                           const SettingOptions& opts) {
  const auto src_it = corpus.find(source);
  const auto tgt_it = corpus.find(target);
  if (src_it == corpus.end()) raise(ErrorCode::Argument, "no windows for dataset " + source);
  if (tgt_it == corpus.end()) raise(ErrorCode::Argument, "no windows for dataset " + target);

  const std::string tag = opts.tag.empty() ? source + "__" + target : opts.tag;
  const uint64_t setting_seed = derive_seed(cfg.seed, "setting_" + source + "->" + target);
  const auto decode = decode_params(cfg);
  interpret::InterpretCounters counters;

  const auto src = interpret_dataset(src_it->second, backend, cache, decode, &counters);
  const auto tgt = interpret_dataset(tgt_it->second, backend, cache, decode, &counters);

  const text::TextEncoder embedder(embedder_config(cfg));
  const auto src_f = filter_corpus(src, embedder, backend, cache, decode, cfg.filter, &counters);
  const auto tgt_f = filter_corpus(tgt, embedder, backend, cache, decode, cfg.filter, &counters);

  // training subset of the source
  std::optional<std::set<std::string>> train_set;
  if (opts.train_labels) train_set.emplace(opts.train_labels->begin(), opts.train_labels->end());
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < src.windows.size(); ++i) {
    const auto& label = src.windows[i].label;
    if (!label) continue;
    if (train_set && !train_set->count(*label)) continue;
    train_idx.push_back(i);
  }
  if (train_idx.empty())
    raise(ErrorCode::Validation, "no training windows for setting " + source + "->" + target);

  // evaluation subset of the target
  std::optional<std::set<std::string>> eval_set;
  if (opts.eval_labels) eval_set.emplace(opts.eval_labels->begin(), opts.eval_labels->end());
  std::vector<std::size_t> eval_idx;
  for (std::size_t i = 0; i < tgt.windows.size(); ++i) {
    const auto& label = tgt.windows[i].label;
    if (!label) continue;
    if (eval_set && !eval_set->count(*label)) continue;
    eval_idx.push_back(i);
  }
  if (eval_idx.empty())
    raise(ErrorCode::Validation, "no evaluation windows for setting " + source + "->" + target);

  // bank candidates: training labels, evaluated labels, and explicit extras
  std::set<std::string> bank_labels;
  for (std::size_t i : train_idx) bank_labels.insert(*src.windows[i].label);
  for (std::size_t i : eval_idx) bank_labels.insert(*tgt.windows[i].label);
  bank_labels.insert(opts.extra_bank_labels.begin(), opts.extra_bank_labels.end());

  const auto label_texts =
      label_interpretations({bank_labels.begin(), bank_labels.end()}, cfg.eval.label_variants,
                            backend, cache, decode, &counters);

  // stage 1: text encoder
  std::vector<train::TrainPair> pairs;
  for (std::size_t i : train_idx) {
    const std::string& label = *src.windows[i].label;
    pairs.push_back({src_f.interps[i].text, label_texts.at(label)[0], label});
  }
  const fs::path text_ckpt = layout.checkpoints / (tag + ".text.ckpt");
  const fs::path text_metrics = layout.checkpoints / (tag + ".text_metrics.jsonl");
  const auto tstage = train_text_stage(pairs, cfg, setting_seed, text_ckpt, text_metrics);
  const auto models = train::load_text_checkpoint(text_ckpt);

  // stage 2: sensor encoder aligned to the trained text embeddings
  std::vector<IMUWindow> train_windows;
  std::vector<std::string> train_texts;
  for (std::size_t i : train_idx) {
    train_windows.push_back(src.windows[i]);
    train_texts.push_back(src_f.interps[i].text);
  }
  const fs::path sensor_ckpt = layout.checkpoints / (tag + ".sensor.ckpt");
  const fs::path sensor_metrics = layout.checkpoints / (tag + ".sensor_metrics.jsonl");
  const auto sstage =
      train_sensor_stage(train_windows, train_texts, *models.encoder, tstage.checkpoint_id, cfg,
                         setting_seed, sensor_ckpt, sensor_metrics);
  const auto smodel = sensor::load_sensor_checkpoint(sensor_ckpt);

  const auto bank = assemble_bank({bank_labels.begin(), bank_labels.end()}, label_texts,
                                  *models.encoder, tstage.checkpoint_id);
  infer::verify_compatible(bank, smodel);

  // classify the evaluation subset
  std::vector<std::string> preds, golds;
  for (std::size_t i : eval_idx) {
    preds.push_back(infer::classify(tgt.windows[i], smodel, bank).label);
    golds.push_back(*tgt.windows[i].label);
  }
  std::set<std::string> label_set = bank_labels;
  label_set.insert(golds.begin(), golds.end());

  SettingOutcome outcome;
  outcome.report = eval::evaluate_predictions(source, target, preds, golds,
                                              {label_set.begin(), label_set.end()},
                                              CategoryTable::defaults(), cfg.fingerprint());

  // heterogeneity table over all labeled windows of both datasets
  const auto samples_of = [&](const InterpretedCorpus& c, const FilterOutcome& f,
                              const std::string& id) {
    eval::EvalSamples s;
    s.dataset_id = id;
    for (std::size_t i = 0; i < c.windows.size(); ++i) {
      if (!c.windows[i].label) continue;
      s.windows.push_back(c.windows[i]);
      s.embeddings.push_back(models.encoder->encode(f.interps[i].text));
      s.labels.push_back(*c.windows[i].label);
    }
    return s;
  };
  outcome.kl = eval::kl_report(samples_of(src, src_f, source), samples_of(tgt, tgt_f, target));

  outcome.summary["setting"] = source + "->" + target;
  outcome.summary["tag"] = tag;
  outcome.summary["backend_calls"] = counters.backend_calls;
  outcome.summary["cache_hits"] = counters.cache_hits;
  outcome.summary["text_checkpoint_id"] = tstage.checkpoint_id;
  outcome.summary["sensor_checkpoint_id"] = sstage.checkpoint_id;
  outcome.summary["train_windows"] = static_cast<long>(train_idx.size());
  outcome.summary["eval_windows"] = static_cast<long>(eval_idx.size());
  return outcome;
}

namespace {

nlohmann::ordered_json base_result(const config::ExperimentConfig& cfg, const std::string& step) {
  nlohmann::ordered_json doc;
  doc["step"] = step;
  doc["config_fingerprint"] = cfg.fingerprint();
  return doc;
}

nlohmann::ordered_json step_ingest(const config::ExperimentConfig& cfg, const RunLayout& layout) {
  if (cfg.datasets.empty()) raise(ErrorCode::Argument, "no datasets configured");
  auto result = base_result(cfg, "ingest");
  result["datasets"] = nlohmann::ordered_json::array();
  for (const auto& ds : cfg.datasets) {
    const auto windows = ingest_dataset(ds, cfg.preprocess);
    dataset::save_windows_jsonl(windows_path(layout, ds.id), windows);
    nlohmann::ordered_json meta;
    meta["config_fingerprint"] = cfg.fingerprint();
    meta["dataset"] = ds.id;
    meta["windows"] = windows.size();
    meta["labels"] = label_histogram(windows);
    write_text_file_atomic(layout.data / (ds.id + ".meta.json"), meta.dump(2) + "\n");
    nlohmann::ordered_json row;
    row["id"] = ds.id;
    row["windows"] = windows.size();
    row["labels"] = meta["labels"];
    result["datasets"].push_back(std::move(row));
  }
  return result;
}

nlohmann::ordered_json step_analyze(const config::ExperimentConfig& cfg, const RunLayout& layout) {
  auto result = base_result(cfg, "analyze");
  result["datasets"] = nlohmann::ordered_json::array();
  for (const auto& ds : cfg.datasets) {
    const auto windows = load_ingested(layout, ds.id);
    std::string body;
    long degenerate = 0;
    for (const auto& w : windows) {
      const auto st = stats::compute_stats(w);
      if (std::any_of(st.degenerate.begin(), st.degenerate.end(), [](bool b) { return b; }))
        ++degenerate;
      nlohmann::ordered_json line;
      line["window_id"] = w.window_id;
      line["stats"] = stats::to_json(st);
      body += line.dump() + "\n";
    }
    write_text_file_atomic(stats_path(layout, ds.id), body);
    nlohmann::ordered_json row;
    row["id"] = ds.id;
    row["windows"] = windows.size();
    row["degenerate_windows"] = degenerate;
    result["datasets"].push_back(std::move(row));
  }
  return result;
}

nlohmann::ordered_json step_interpret(const config::ExperimentConfig& cfg,
                                      const RunLayout& layout) {
  auto backend = make_backend(cfg.backend);
  interpret::ResponseCache cache(layout.cache);
  interpret::InterpretCounters counters;
  const auto decode = decode_params(cfg);

  auto result = base_result(cfg, "interpret");
  result["datasets"] = nlohmann::ordered_json::array();
  for (const auto& ds : cfg.datasets) {
    const auto windows = load_ingested(layout, ds.id);
    const auto corpus = interpret_dataset(windows, *backend, cache, decode, &counters);
    write_interps_jsonl(interp_path(layout, ds.id), corpus.interps);
    nlohmann::ordered_json row;
    row["id"] = ds.id;
    row["interpretations"] = corpus.interps.size();
    result["datasets"].push_back(std::move(row));
  }

  const auto texts = label_interpretations(canonical_labels(), cfg.eval.label_variants, *backend,
                                           cache, decode, &counters);
  nlohmann::ordered_json labels_doc;
  labels_doc["config_fingerprint"] = cfg.fingerprint();
  labels_doc["variants"] = cfg.eval.label_variants;
  labels_doc["labels"] = nlohmann::ordered_json::object();
  for (const auto& [label, list] : texts) labels_doc["labels"][label] = list;
  write_text_file_atomic(labels_path(layout), labels_doc.dump(2) + "\n");

  result["label_descriptions"] = texts.size();
  result["backend_calls"] = counters.backend_calls;
  result["cache_hits"] = counters.cache_hits;
  return result;
}

std::map<std::string, std::vector<std::string>> load_label_texts(const config::ExperimentConfig&,
                                                                 const RunLayout& layout) {
  const fs::path p = labels_path(layout);
  require_artifact(layout, p, "label descriptions", "interpret");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(p));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Parse, "malformed label descriptions file: " + std::string(e.what()));
  }
  std::map<std::string, std::vector<std::string>> texts;
  for (const auto& [label, list] : doc.at("labels").items())
    texts[label] = list.get<std::vector<std::string>>();
  return texts;
}

InterpretedCorpus load_interpreted(const config::ExperimentConfig&, const RunLayout& layout,
                                   const std::string& id, bool filtered) {
  InterpretedCorpus corpus;
  corpus.windows = load_ingested(layout, id);
  const fs::path p = filtered ? filtered_path(layout, id) : interp_path(layout, id);
  require_artifact(layout, p, filtered ? "filtered interpretations" : "interpretations",
                   filtered ? "filter" : "interpret");
  corpus.interps = align_interps(layout, corpus.windows, load_interps_jsonl(p), p);
  corpus.stats.reserve(corpus.windows.size());
  for (const auto& w : corpus.windows) corpus.stats.push_back(stats::compute_stats(w));
  return corpus;
}

nlohmann::ordered_json step_filter(const config::ExperimentConfig& cfg, const RunLayout& layout) {
  auto backend = make_backend(cfg.backend);
  interpret::ResponseCache cache(layout.cache);
  interpret::InterpretCounters counters;
  const auto decode = decode_params(cfg);
  const text::TextEncoder embedder(embedder_config(cfg));

  auto result = base_result(cfg, "filter");
  result["datasets"] = nlohmann::ordered_json::array();
  for (const auto& ds : cfg.datasets) {
    const auto corpus = load_interpreted(cfg, layout, ds.id, /*filtered=*/false);
    const auto outcome =
        filter_corpus(corpus, embedder, *backend, cache, decode, cfg.filter, &counters);
    write_interps_jsonl(filtered_path(layout, ds.id), outcome.interps);
    nlohmann::ordered_json report_doc;
    report_doc["config_fingerprint"] = cfg.fingerprint();
    report_doc["dataset"] = ds.id;
    report_doc["filter"] = outcome.result.report_json();
    write_text_file_atomic(layout.reports / ("filter_" + ds.id + ".json"),
                           report_doc.dump(2) + "\n");
    int accepted = 0, rejected = 0, failed = 0, skipped = 0;
    for (const auto& r : outcome.result.reports) {
      accepted += r.accepted;
      rejected += r.rejected;
      failed += r.failed;
      skipped += r.skipped ? 1 : 0;
    }
    nlohmann::ordered_json row;
    row["id"] = ds.id;
    row["activities"] = outcome.result.reports.size();
    row["accepted"] = accepted;
    row["rejected"] = rejected;
    row["failed"] = failed;
    row["skipped_activities"] = skipped;
    result["datasets"].push_back(std::move(row));
  }
  result["backend_calls"] = counters.backend_calls;
  result["cache_hits"] = counters.cache_hits;
  return result;
}

nlohmann::ordered_json step_train_text(const config::ExperimentConfig& cfg,
                                       const RunLayout& layout) {
  if (cfg.eval.source.empty())
    raise(ErrorCode::Argument, "eval.source must name the training dataset");
  cfg.dataset(cfg.eval.source);  // raises for unknown ids
  const auto corpus = load_interpreted(cfg, layout, cfg.eval.source, /*filtered=*/true);
  const auto label_texts = load_label_texts(cfg, layout);

  std::vector<train::TrainPair> pairs;
  for (std::size_t i = 0; i < corpus.windows.size(); ++i) {
    const auto& label = corpus.windows[i].label;
    if (!label) continue;
    auto it = label_texts.find(*label);
    if (it == label_texts.end() || it->second.empty())
      raise(ErrorCode::Dependency,
            "no description texts for label " + *label + " (re-run interpret)");
    pairs.push_back({corpus.interps[i].text, it->second[0], *label});
  }
  if (pairs.empty())
    raise(ErrorCode::Validation, "dataset " + cfg.eval.source + " has no labeled windows");

  const auto outcome = train_text_stage(pairs, cfg, cfg.seed, text_ckpt_path(layout),
                                        layout.checkpoints / "text_metrics.jsonl");
  auto result = base_result(cfg, "train-text");
  result["checkpoint"] = rel(layout, text_ckpt_path(layout));
  result["checkpoint_id"] = outcome.checkpoint_id;
  result["pairs"] = pairs.size();
  result["epochs"] = outcome.result.history.size();
  result["best_epoch"] = outcome.result.best_epoch;
  result["best_val_align"] = outcome.result.best_val_align;
  return result;
}

nlohmann::ordered_json step_train_sensor(const config::ExperimentConfig& cfg,
                                         const RunLayout& layout) {
  if (cfg.eval.source.empty())
    raise(ErrorCode::Argument, "eval.source must name the training dataset");
  require_artifact(layout, text_ckpt_path(layout), "text encoder checkpoint", "train-text");
  const auto models = train::load_text_checkpoint(text_ckpt_path(layout));
  const std::string text_id = nn::checkpoint_id(text_ckpt_path(layout));

  const auto corpus = load_interpreted(cfg, layout, cfg.eval.source, /*filtered=*/true);
  std::vector<std::string> texts;
  texts.reserve(corpus.interps.size());
  for (const auto& si : corpus.interps) texts.push_back(si.text);

  const auto outcome = train_sensor_stage(corpus.windows, texts, *models.encoder, text_id, cfg,
                                          cfg.seed, sensor_ckpt_path(layout),
                                          layout.checkpoints / "sensor_metrics.jsonl");
  auto result = base_result(cfg, "train-sensor");
  result["checkpoint"] = rel(layout, sensor_ckpt_path(layout));
  result["checkpoint_id"] = outcome.checkpoint_id;
  result["text_checkpoint_id"] = text_id;
  result["windows"] = corpus.windows.size();
  result["epochs"] = outcome.result.history.size();
  result["best_epoch"] = outcome.result.best_epoch;
  result["best_val_retrieval"] = outcome.result.best_val_retrieval;
  return result;
}

nlohmann::ordered_json step_build_bank(const config::ExperimentConfig& cfg,
                                       const RunLayout& layout, const nlohmann::json& args) {
  require_artifact(layout, text_ckpt_path(layout), "text encoder checkpoint", "train-text");
  const auto models = train::load_text_checkpoint(text_ckpt_path(layout));
  const std::string text_id = nn::checkpoint_id(text_ckpt_path(layout));
  const auto label_texts = load_label_texts(cfg, layout);

  std::vector<std::string> labels;
  if (args.contains("labels")) {
    labels = args.at("labels").get<std::vector<std::string>>();
  } else {
    std::set<std::string> seen;
    for (const auto& ds : cfg.datasets) {
      for (const auto& label : labels_of(load_ingested(layout, ds.id))) seen.insert(label);
    }
    labels.assign(seen.begin(), seen.end());
  }
  if (labels.empty()) raise(ErrorCode::Argument, "no labels to build the bank from");

  const auto bank = assemble_bank(labels, label_texts, *models.encoder, text_id);
  bank.save(bank_path(layout));
  nlohmann::ordered_json meta;
  meta["config_fingerprint"] = cfg.fingerprint();
  meta["labels"] = labels;
  meta["dim"] = bank.dim();
  meta["text_checkpoint_id"] = text_id;
  write_text_file_atomic(layout.banks / "label_bank.meta.json", meta.dump(2) + "\n");

  auto result = base_result(cfg, "build-bank");
  result["bank"] = rel(layout, bank_path(layout));
  result["labels"] = labels;
  result["dim"] = bank.dim();
  return result;
}

nlohmann::ordered_json step_infer(const config::ExperimentConfig& cfg, const RunLayout& layout,
                                  const nlohmann::json& args) {
  require_artifact(layout, sensor_ckpt_path(layout), "sensor encoder checkpoint", "train-sensor");
  require_artifact(layout, bank_path(layout), "label bank", "build-bank");
  if (!args.contains("input") || !args.at("input").is_string())
    raise(ErrorCode::Argument, "infer requires args.input: path to a windows JSONL file");
  const fs::path input = args.at("input").get<std::string>();

  const auto model = sensor::load_sensor_checkpoint(sensor_ckpt_path(layout));
  const auto bank = infer::LabelBank::load(bank_path(layout));
  infer::verify_compatible(bank, model);

  const auto windows = dataset::load_windows_jsonl(input);
  auto result = base_result(cfg, "infer");
  result["input"] = input.string();
  result["results"] = nlohmann::ordered_json::array();
  std::map<std::string, long> counts;
  for (const auto& w : windows) {
    const auto c = infer::classify(w, model, bank, cfg.eval.min_similarity);
    ++counts[c.label];
    nlohmann::ordered_json row;
    row["window_id"] = w.window_id;
    row["label"] = c.label;
    row["category_id"] = c.category_id;
    row["similarity"] = c.similarity;
    result["results"].push_back(std::move(row));
  }
  result["counts"] = nlohmann::ordered_json::object();
  for (const auto& [label, n] : counts) result["counts"][label] = n;

  write_text_file_atomic(layout.reports / ("infer_" + input.stem().string() + ".json"),
                         result.dump(2) + "\n");
  return result;
}

void write_setting_reports(const RunLayout& layout, const std::string& prefix,
                           const SettingOutcome& outcome) {
  const std::string stem =
      prefix + outcome.report.source_dataset + "_" + outcome.report.target_dataset;
  nlohmann::ordered_json doc = outcome.report.to_json();
  doc["summary"] = outcome.summary;
  write_text_file_atomic(layout.reports / (stem + ".json"), doc.dump(2) + "\n");
  write_text_file_atomic(layout.reports / ("kl_" + stem + ".json"),
                         outcome.kl.to_json().dump(2) + "\n");
  write_text_file_atomic(layout.reports / ("kl_" + stem + ".csv"), outcome.kl.to_csv());
}

nlohmann::ordered_json step_evaluate(const config::ExperimentConfig& cfg, const RunLayout& layout,
                                     const nlohmann::json& args) {
  const std::string protocol =
      args.contains("protocol") ? args.at("protocol").get<std::string>() : "single";

  if (protocol == "single") {
    if (cfg.eval.source.empty() || cfg.eval.target.empty())
      raise(ErrorCode::Argument, "eval.source and eval.target must be configured");
    require_artifact(layout, text_ckpt_path(layout), "text encoder checkpoint", "train-text");
    require_artifact(layout, sensor_ckpt_path(layout), "sensor encoder checkpoint",
                     "train-sensor");
    require_artifact(layout, bank_path(layout), "label bank", "build-bank");

    const auto models = train::load_text_checkpoint(text_ckpt_path(layout));
    const auto model = sensor::load_sensor_checkpoint(sensor_ckpt_path(layout));
    const auto bank = infer::LabelBank::load(bank_path(layout));
    infer::verify_compatible(bank, model);

    const auto src = load_interpreted(cfg, layout, cfg.eval.source, /*filtered=*/true);
    const auto tgt = load_interpreted(cfg, layout, cfg.eval.target, /*filtered=*/true);

    std::vector<std::string> preds, golds;
    for (std::size_t i = 0; i < tgt.windows.size(); ++i) {
      if (!tgt.windows[i].label) continue;
      preds.push_back(infer::classify(tgt.windows[i], model, bank).label);
      golds.push_back(*tgt.windows[i].label);
    }
    if (golds.empty())
      raise(ErrorCode::Validation, "dataset " + cfg.eval.target + " has no labeled windows");

    std::set<std::string> label_set(golds.begin(), golds.end());
    for (const auto& entry : bank.entries()) label_set.insert(entry.label);

    SettingOutcome outcome;
    outcome.report = eval::evaluate_predictions(cfg.eval.source, cfg.eval.target, preds, golds,
                                                {label_set.begin(), label_set.end()},
                                                CategoryTable::defaults(), cfg.fingerprint());
    const auto samples_of = [&](const InterpretedCorpus& c, const std::string& id) {
      eval::EvalSamples s;
      s.dataset_id = id;
      for (std::size_t i = 0; i < c.windows.size(); ++i) {
        if (!c.windows[i].label) continue;
        s.windows.push_back(c.windows[i]);
        s.embeddings.push_back(models.encoder->encode(c.interps[i].text));
        s.labels.push_back(*c.windows[i].label);
      }
      return s;
    };
    outcome.kl = eval::kl_report(samples_of(src, cfg.eval.source), samples_of(tgt, cfg.eval.target));
    outcome.summary["eval_windows"] = static_cast<long>(golds.size());
    write_setting_reports(layout, "eval_", outcome);

    auto result = base_result(cfg, "evaluate");
    result["protocol"] = "single";
    result["report"] = outcome.report.to_json();
    result["kl"] = {{"raw_avg", outcome.kl.raw_avg}, {"embedding_avg", outcome.kl.embedding_avg}};
    return result;
  }

  // protocols below retrain per setting from the ingested corpora
  std::vector<std::string> ids;
  std::map<std::string, std::vector<IMUWindow>> corpus;
  for (const auto& ds : cfg.datasets) {
    ids.push_back(ds.id);
    corpus[ds.id] = load_ingested(layout, ds.id);
  }
  auto backend = make_backend(cfg.backend);
  interpret::ResponseCache cache(layout.cache);

  if (protocol == "cross_dataset") {
    const auto runner = [&](const std::string& s, const std::string& t) {
      const auto outcome = run_setting(cfg, layout, corpus, s, t, *backend, cache);
      write_setting_reports(layout, "eval_", outcome);
      return outcome.report;
    };
    const auto outcome = eval::run_cross_dataset(ids, runner);
    write_text_file_atomic(layout.reports / "cross_dataset.csv", outcome.to_table_csv());
    nlohmann::ordered_json doc;
    doc["config_fingerprint"] = cfg.fingerprint();
    doc["outcome"] = outcome.to_json();
    write_text_file_atomic(layout.reports / "cross_dataset.json", doc.dump(2) + "\n");

    auto result = base_result(cfg, "evaluate");
    result["protocol"] = "cross_dataset";
    result["settings"] = outcome.reports.size();
    result["failures"] = outcome.failures;
    result["csv"] = rel(layout, layout.reports / "cross_dataset.csv");
    return result;
  }

  if (protocol == "new_activity") {
    std::map<std::string, std::vector<std::string>> inventories;
    for (const auto& [id, windows] : corpus) inventories[id] = labels_of(windows);
    const auto runner = [&](const std::string& s, const std::string& t,
                            const std::vector<std::string>& new_labels) {
      SettingOptions opts;
      opts.train_labels = common_activities();
      opts.eval_labels = new_labels;
      opts.tag = "newact_" + s + "__" + t;
      const auto outcome = run_setting(cfg, layout, corpus, s, t, *backend, cache, opts);
      write_setting_reports(layout, "newact_", outcome);
      return outcome.report;
    };
    const auto outcome = eval::run_new_activity(ids, inventories, common_activities(), runner);
    write_text_file_atomic(layout.reports / "new_activity.csv", outcome.to_table_csv());
    nlohmann::ordered_json doc;
    doc["config_fingerprint"] = cfg.fingerprint();
    doc["outcome"] = outcome.to_json();
    write_text_file_atomic(layout.reports / "new_activity.json", doc.dump(2) + "\n");

    auto result = base_result(cfg, "evaluate");
    result["protocol"] = "new_activity";
    result["settings"] = outcome.reports.size();
    result["skipped"] = outcome.skipped;
    result["failures"] = outcome.failures;
    result["csv"] = rel(layout, layout.reports / "new_activity.csv");
    return result;
  }

  raise(ErrorCode::Argument,
        "unknown protocol: " + protocol + " (expected single, cross_dataset or new_activity)");
}

nlohmann::ordered_json step_report(const config::ExperimentConfig& cfg, const RunLayout& layout,
                                   const nlohmann::json& args) {
  const bool force = args.contains("force") && args.at("force").get<bool>();

  std::vector<fs::path> inputs;
  std::vector<fs::path> found;
  for (const auto& entry : fs::directory_iterator(layout.reports)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("eval_", 0) == 0 && name.size() > 10 &&
        name.substr(name.size() - 5) == ".json")
      found.push_back(entry.path());
  }
  std::sort(found.begin(), found.end());
  inputs = found;
  if (args.contains("inputs"))
    for (const auto& p : args.at("inputs").get<std::vector<std::string>>())
      inputs.emplace_back(p);
  if (inputs.empty())
    raise(ErrorCode::Dependency,
          "no evaluation reports under " + rel(layout, layout.reports) + " (run evaluate first)");

  std::vector<eval::EvalReport> reports;
  for (const auto& p : inputs) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(read_text_file(p));
    } catch (const nlohmann::json::exception& e) {
      raise(ErrorCode::Parse, "malformed report " + p.string() + ": " + e.what());
    }
    auto report = eval::EvalReport::from_json(doc);
    if (report.config_fingerprint != cfg.fingerprint() && !force)
      raise(ErrorCode::Validation, "fingerprint mismatch in " + p.string() + ": report has " +
                                       report.config_fingerprint + ", config is " +
                                       cfg.fingerprint() + " (pass force to aggregate anyway)");
    reports.push_back(std::move(report));
  }

  eval::CrossDatasetOutcome summary;
  summary.reports = reports;
  write_text_file_atomic(layout.reports / "summary.csv", summary.to_table_csv());
  nlohmann::ordered_json doc;
  doc["config_fingerprint"] = cfg.fingerprint();
  doc["forced"] = force;
  doc["outcome"] = summary.to_json();
  write_text_file_atomic(layout.reports / "summary.json", doc.dump(2) + "\n");

  auto result = base_result(cfg, "report");
  result["settings"] = reports.size();
  result["forced"] = force;
  result["csv"] = rel(layout, layout.reports / "summary.csv");
  return result;
}

}  // namespace

const std::vector<std::string>& step_names() {
  static const std::vector<std::string> names = {
      "ingest",     "analyze",      "interpret",  "filter", "train-text",
      "train-sensor", "build-bank", "infer",      "evaluate", "report"};
  return names;
}

nlohmann::ordered_json run_step(const config::ExperimentConfig& cfg, const std::string& step,
                                const nlohmann::json& args) {
  const auto layout = RunLayout::create(cfg);
  if (step == "ingest") return step_ingest(cfg, layout);
  if (step == "analyze") return step_analyze(cfg, layout);
  if (step == "interpret") return step_interpret(cfg, layout);
  if (step == "filter") return step_filter(cfg, layout);
  if (step == "train-text") return step_train_text(cfg, layout);
  if (step == "train-sensor") return step_train_sensor(cfg, layout);
  if (step == "build-bank") return step_build_bank(cfg, layout, args);
  if (step == "infer") return step_infer(cfg, layout, args);
  if (step == "evaluate") return step_evaluate(cfg, layout, args);
  if (step == "report") return step_report(cfg, layout, args);
  std::string known;
  for (const auto& name : step_names()) known += (known.empty() ? "" : ", ") + name;
  raise(ErrorCode::Argument, "unknown step: " + step + " (expected one of " + known + ")");
}

}  // namespace lanhar::pipeline
