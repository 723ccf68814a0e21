#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lanhar/sensor_encoder.hpp"
#include "lanhar/text_model.hpp"
#include "lanhar/types.hpp"

namespace lanhar::infer {

struct BankEntry {
  std::string label;
  int category_id = 0;
  std::vector<std::string> variants;  // description texts behind the embedding
  EmbeddingVector embedding;          // unit-norm mean of the variant embeddings
};

struct LabelDescriptions {
  std::string label;
  std::vector<std::string> variants;
};

// Pre-stored activity-label embeddings searched at inference time. Entries
// are kept sorted by label; the bank is immutable once built.
class LabelBank {
 public:
  const std::vector<BankEntry>& entries() const { return entries_; }
  const std::string& text_checkpoint_id() const { return text_checkpoint_id_; }
  Eigen::Index dim() const;
  const BankEntry* find(const std::string& label) const;

  void save(const std::filesystem::path& path) const;
  static LabelBank load(const std::filesystem::path& path);

 private:
  friend LabelBank build_label_bank(const std::vector<LabelDescriptions>&, const text::TextEncoder&,
                                    const CategoryTable&, const std::string&);
  friend LabelBank add_labels(const LabelBank&, const std::vector<LabelDescriptions>&,
                              const text::TextEncoder&, const CategoryTable&);
  std::vector<BankEntry> entries_;
  std::string text_checkpoint_id_;
};

// One embedding per label: variants are encoded, mean-pooled, re-normalized.
LabelBank build_label_bank(const std::vector<LabelDescriptions>& labels,
                           const text::TextEncoder& encoder, const CategoryTable& categories,
                           const std::string& text_checkpoint_id);

// Extends a bank with new activities by description alone; existing
// embeddings are copied bitwise unchanged.
LabelBank add_labels(const LabelBank& bank, const std::vector<LabelDescriptions>& additions,
                     const text::TextEncoder& encoder, const CategoryTable& categories);

struct Classification {
  std::string label;
  int category_id = 0;
  double similarity = 0.0;
  std::vector<std::pair<std::string, double>> scores;  // per bank label, in [-1, 1]
};

// Raises when the bank was built by a different text encoder than the one
// the sensor model was aligned to, or when dimensions disagree.
void verify_compatible(const LabelBank& bank, const sensor::SensorModel& model);

// Nearest label by cosine similarity; ties go to the lexicographically
// smaller label. With min_similarity set, a best score below it yields
// "unknown" (category 0) while keeping the full score vector.
Classification classify_embedding(const EmbeddingVector& embedding, const LabelBank& bank,
                                  std::optional<double> min_similarity = std::nullopt);

Classification classify(const IMUWindow& window, const sensor::SensorModel& model,
                        const LabelBank& bank,
                        std::optional<double> min_similarity = std::nullopt);

}  // namespace lanhar::infer
