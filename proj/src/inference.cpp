#include "lanhar/inference.hpp"

#include <algorithm>
#include <cmath>

#include "lanhar/error.hpp"
#include "lanhar/losses.hpp"
#include "lanhar/nn/checkpoint.hpp"

namespace lanhar::infer {

namespace {

EmbeddingVector pooled_embedding(const std::vector<std::string>& variants,
                                 const text::TextEncoder& encoder, const std::string& label) {
  if (variants.empty()) {
    raise(ErrorCode::Argument, "label has no description variants: " + label);
  }
  EmbeddingVector sum;
  for (const std::string& text : variants) {
    const EmbeddingVector e = encoder.encode(text);
    if (sum.size() == 0) {
      sum = e;
    } else {
      sum += e;
    }
  }
  sum /= static_cast<double>(variants.size());
  const double norm = sum.norm();
  if (norm <= 0.0) raise(ErrorCode::Numeric, "pooled embedding for " + label + " is zero");
  return sum / norm;
}

void append_entries(std::vector<BankEntry>& entries, const std::vector<LabelDescriptions>& labels,
                    const text::TextEncoder& encoder, const CategoryTable& categories) {
  for (const LabelDescriptions& spec : labels) {
    if (!is_canonical_label(spec.label)) {
      raise(ErrorCode::Label, "label bank accepts only canonical labels, got: " + spec.label);
    }
    BankEntry entry;
    entry.label = spec.label;
    entry.category_id = categories.category_of(spec.label);
    entry.variants = spec.variants;
    entry.embedding = pooled_embedding(spec.variants, encoder, spec.label);
    entries.push_back(std::move(entry));
  }
  std::sort(entries.begin(), entries.end(),
            [](const BankEntry& a, const BankEntry& b) { return a.label < b.label; });
  for (size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].label == entries[i - 1].label) {
      raise(ErrorCode::Validation, "duplicate label in bank: " + entries[i].label);
    }
  }
  const Eigen::Index dim = entries.front().embedding.size();
  for (const BankEntry& e : entries) {
    if (e.embedding.size() != dim) {
      raise(ErrorCode::Validation, "bank embedding dimension mismatch at " + e.label);
    }
  }
}

}  // namespace

Eigen::Index LabelBank::dim() const {
  return entries_.empty() ? 0 : entries_.front().embedding.size();
}

const BankEntry* LabelBank::find(const std::string& label) const {
  for (const BankEntry& e : entries_) {
    if (e.label == label) return &e;
  }
  return nullptr;
}

LabelBank build_label_bank(const std::vector<LabelDescriptions>& labels,
                           const text::TextEncoder& encoder, const CategoryTable& categories,
                           const std::string& text_checkpoint_id) {
  if (labels.empty()) raise(ErrorCode::Argument, "label bank needs at least one label");
  LabelBank bank;
  bank.text_checkpoint_id_ = text_checkpoint_id;
  append_entries(bank.entries_, labels, encoder, categories);
  return bank;
}

LabelBank add_labels(const LabelBank& bank, const std::vector<LabelDescriptions>& additions,
                     const text::TextEncoder& encoder, const CategoryTable& categories) {
  if (additions.empty()) raise(ErrorCode::Argument, "no labels to add");
  LabelBank out = bank;
  for (const LabelDescriptions& spec : additions) {
    if (out.find(spec.label) != nullptr) {
      raise(ErrorCode::Validation, "label already in bank: " + spec.label);
    }
  }
  append_entries(out.entries_, additions, encoder, categories);
  return out;
}

void LabelBank::save(const std::filesystem::path& path) const {
  if (entries_.empty()) raise(ErrorCode::State, "cannot save an empty label bank");
  nn::Matrix block(static_cast<Eigen::Index>(entries_.size()), dim());
  nlohmann::ordered_json manifest;
  manifest["text_checkpoint_id"] = text_checkpoint_id_;
  manifest["dim"] = dim();
  nlohmann::ordered_json labels = nlohmann::ordered_json::array();
  for (size_t i = 0; i < entries_.size(); ++i) {
    block.row(static_cast<Eigen::Index>(i)) = entries_[i].embedding.transpose();
    labels.push_back({{"label", entries_[i].label},
                      {"category_id", entries_[i].category_id},
                      {"variants", entries_[i].variants}});
  }
  manifest["labels"] = std::move(labels);
  const nn::Parameter block_param("label_bank.embeddings", block);
  nn::write_checkpoint(path, {&block_param}, {{"manifest", manifest.dump()}});
}

LabelBank LabelBank::load(const std::filesystem::path& path) {
  const nn::CheckpointData data = nn::read_checkpoint(path);
  const auto tensor = data.tensors.find("label_bank.embeddings");
  if (tensor == data.tensors.end()) {
    raise(ErrorCode::Parse, "not a label bank archive: " + path.string());
  }
  const auto meta = data.metadata.find("manifest");
  if (meta == data.metadata.end()) {
    raise(ErrorCode::Parse, "label bank manifest missing: " + path.string());
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(meta->second);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Parse, "corrupt label bank manifest: " + std::string(e.what()));
  }

  LabelBank bank;
  bank.text_checkpoint_id_ = manifest.at("text_checkpoint_id").get<std::string>();
  const auto& labels = manifest.at("labels");
  const nn::Matrix& block = tensor->second;
  if (static_cast<size_t>(block.rows()) != labels.size() ||
      block.cols() != manifest.at("dim").get<Eigen::Index>()) {
    raise(ErrorCode::Validation, "label bank block does not match its manifest");
  }
  if (labels.empty()) raise(ErrorCode::Validation, "label bank has no entries");
  for (size_t i = 0; i < labels.size(); ++i) {
    BankEntry entry;
    entry.label = labels[i].at("label").get<std::string>();
    entry.category_id = labels[i].at("category_id").get<int>();
    entry.variants = labels[i].at("variants").get<std::vector<std::string>>();
    entry.embedding = block.row(static_cast<Eigen::Index>(i)).transpose();
    bank.entries_.push_back(std::move(entry));
  }
  for (size_t i = 1; i < bank.entries_.size(); ++i) {
    if (bank.entries_[i].label <= bank.entries_[i - 1].label) {
      raise(ErrorCode::Validation, "label bank entries are not sorted and unique");
    }
  }
  return bank;
}

void verify_compatible(const LabelBank& bank, const sensor::SensorModel& model) {
  const std::string trained_against =
      model.sidecar.value("text_checkpoint_id", std::string());
  if (trained_against.empty() || bank.text_checkpoint_id().empty() ||
      trained_against != bank.text_checkpoint_id()) {
    raise(ErrorCode::Validation,
          "label bank was built by text checkpoint '" + bank.text_checkpoint_id() +
              "' but the sensor encoder was aligned to '" + trained_against + "'");
  }
  if (bank.dim() != model.encoder->config().d_model) {
    raise(ErrorCode::Validation, "label bank dimension does not match the sensor encoder");
  }
}

Classification classify_embedding(const EmbeddingVector& embedding, const LabelBank& bank,
                                  std::optional<double> min_similarity) {
  if (bank.entries().empty()) raise(ErrorCode::Argument, "label bank is empty");
  Classification out;
  out.scores.reserve(bank.entries().size());
  bool first = true;
  // Entries are label-sorted, so a strict comparison breaks ties toward the
  // lexicographically smaller label.
  for (const BankEntry& entry : bank.entries()) {
    const double score = losses::cosine_similarity(embedding, entry.embedding);
    out.scores.emplace_back(entry.label, score);
    if (first || score > out.similarity) {
      first = false;
      out.similarity = score;
      out.label = entry.label;
      out.category_id = entry.category_id;
    }
  }
  if (min_similarity.has_value() && out.similarity < *min_similarity) {
    out.label = "unknown";
    out.category_id = 0;
  }
  return out;
}

Classification classify(const IMUWindow& window, const sensor::SensorModel& model,
                        const LabelBank& bank, std::optional<double> min_similarity) {
  if (model.encoder == nullptr) raise(ErrorCode::State, "sensor model has no encoder");
  if (!model.normalizer.fitted()) raise(ErrorCode::State, "sensor model normalizer is unfitted");
  if (window.data.rows() != model.encoder->config().window_len) {
    raise(ErrorCode::Argument,
          "window length " + std::to_string(window.data.rows()) + " does not match encoder (" +
              std::to_string(model.encoder->config().window_len) + ")");
  }
  if (std::abs(window.rate_hz - model.rate_hz) > 1e-9) {
    raise(ErrorCode::Argument, "window rate " + format_double(window.rate_hz, 3) +
                                   " Hz does not match encoder rate " +
                                   format_double(model.rate_hz, 3) + " Hz");
  }
  const EmbeddingVector e = model.encoder->forward(model.normalizer.apply(window));
  return classify_embedding(e, bank, min_similarity);
}

}  // namespace lanhar::infer
