#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanhar/types.hpp"

namespace lanhar::eval {

// Fraction of predictions exactly equal to the gold labels.
double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& golds);

// Unweighted mean of per-class F1 over the given label set; classes absent
// from both golds and preds are excluded from the mean.
double macro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                const std::vector<std::string>& label_set);

// Accuracy after coarsening labels into similarity categories.
double category_accuracy(const std::vector<std::string>& preds,
                         const std::vector<std::string>& golds, const CategoryTable& categories);

struct ConfusionMatrix {
  std::vector<std::string> labels;          // sorted label set
  std::vector<std::vector<long>> counts;    // counts[gold][pred]
  nlohmann::ordered_json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json& doc);
};

ConfusionMatrix confusion(const std::vector<std::string>& preds,
                          const std::vector<std::string>& golds,
                          const std::vector<std::string>& label_set);

struct EvalReport {
  std::string setting;  // "source->target"
  std::string source_dataset;
  std::string target_dataset;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double category_accuracy = 0.0;
  long n_windows = 0;
  ConfusionMatrix confusion;
  std::string config_fingerprint;
  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::json& doc);
};

EvalReport evaluate_predictions(const std::string& source_dataset,
                                const std::string& target_dataset,
                                const std::vector<std::string>& preds,
                                const std::vector<std::string>& golds,
                                const std::vector<std::string>& label_set,
                                const CategoryTable& categories,
                                const std::string& config_fingerprint);

// One dataset's evaluation samples: raw windows with gold labels and the
// embeddings of their interpretations, in matching order.
struct EvalSamples {
  std::string dataset_id;
  std::vector<IMUWindow> windows;
  std::vector<EmbeddingVector> embeddings;
  std::vector<std::string> labels;
};

// Deterministic per-window feature vector summarizing the raw signal (five
// statistics per channel); the raw-space side of the heterogeneity table.
EmbeddingVector raw_features(const IMUWindow& window);

struct KlRow {
  std::string activity;
  bool skipped = false;
  std::string warning;
  double raw_kl = 0.0;
  double embedding_kl = 0.0;
};

// Per-activity KL divergence between two datasets, in raw-feature space and
// in interpretation-embedding space, plus the average over shared activities.
struct KlReport {
  std::string dataset_a;
  std::string dataset_b;
  std::vector<KlRow> rows;  // sorted by activity
  double raw_avg = 0.0;
  double embedding_avg = 0.0;
  nlohmann::ordered_json to_json() const;
  std::string to_csv() const;
};

KlReport kl_report(const EvalSamples& a, const EvalSamples& b);

// Cross-dataset protocol: every ordered (source, target) pair of the given
// datasets is trained and evaluated by the injected runner; failures are
// recorded per pair and the remaining pairs continue.
using PairRunner = std::function<EvalReport(const std::string& source, const std::string& target)>;

struct CrossDatasetOutcome {
  std::vector<EvalReport> reports;
  std::vector<std::string> failures;  // "source->target: message"
  std::string to_table_csv() const;   // one row per setting plus an average row
  nlohmann::ordered_json to_json() const;
};

// Exact header of the cross-dataset summary CSV.
extern const char* kCrossDatasetCsvHeader;

CrossDatasetOutcome run_cross_dataset(const std::vector<std::string>& dataset_ids,
                                      const PairRunner& run_pair);

// New-activity protocol: for each ordered pair, the runner trains on the
// common activities of the source and is evaluated only on target windows
// whose gold label is outside the common set, with those labels added to the
// bank by description alone. Settings without new activities are skipped.
using NewActivityRunner =
    std::function<EvalReport(const std::string& source, const std::string& target,
                             const std::vector<std::string>& new_labels)>;

struct NewActivityOutcome {
  std::vector<EvalReport> reports;
  std::vector<std::string> skipped;   // "source->target: message"
  std::vector<std::string> failures;
  std::string to_table_csv() const;
  nlohmann::ordered_json to_json() const;
};

NewActivityOutcome run_new_activity(
    const std::vector<std::string>& dataset_ids,
    const std::map<std::string, std::vector<std::string>>& dataset_labels,
    const std::vector<std::string>& common, const NewActivityRunner& run_pair);

}  // namespace lanhar::eval
