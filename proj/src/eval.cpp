#include "lanhar/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "lanhar/error.hpp"
#include "lanhar/quality_filter.hpp"
#include "lanhar/signal_stats.hpp"
#include "lanhar/util.hpp"

namespace lanhar::eval {

namespace {

void check_paired(const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
  if (preds.empty()) raise(ErrorCode::Argument, "no predictions to score");
  if (preds.size() != golds.size())
    raise(ErrorCode::Argument, "predictions and golds differ in length: " +
                                   std::to_string(preds.size()) + " vs " +
                                   std::to_string(golds.size()));
}

std::vector<std::string> sorted_unique(const std::vector<std::string>& labels) {
  std::vector<std::string> out = labels;
  std::sort(out.begin(), out.end());
  if (std::adjacent_find(out.begin(), out.end()) != out.end())
    raise(ErrorCode::Argument, "label set contains duplicates");
  return out;
}

std::string csv_num(double v) { return format_double(v, 6); }

}  // namespace

double accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
  check_paired(preds, golds);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == golds[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double macro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                const std::vector<std::string>& label_set) {
  check_paired(preds, golds);
  if (label_set.empty()) raise(ErrorCode::Argument, "empty label set");
  const std::vector<std::string> labels = sorted_unique(label_set);
  std::set<std::string> known(labels.begin(), labels.end());
  for (const auto& g : golds)
    if (!known.count(g)) raise(ErrorCode::Argument, "gold label outside label set: " + g);

  double sum = 0.0;
  std::size_t present = 0;
  for (const auto& label : labels) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i] == label;
      const bool g = golds[i] == label;
      if (p && g) ++tp;
      else if (p) ++fp;
      else if (g) ++fn;
    }
    if (tp + fp + fn == 0) continue;  // absent from both golds and preds
    sum += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    ++present;
  }
  if (present == 0) raise(ErrorCode::Argument, "no label from the set appears in the data");
  return sum / static_cast<double>(present);
}

double category_accuracy(const std::vector<std::string>& preds,
                         const std::vector<std::string>& golds, const CategoryTable& categories) {
  check_paired(preds, golds);
  auto category = [&](const std::string& label) {
    if (!categories.contains(label)) raise(ErrorCode::Argument, "uncategorized label: " + label);
    return categories.category_of(label);
  };
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (category(preds[i]) == category(golds[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

nlohmann::ordered_json ConfusionMatrix::to_json() const {
  nlohmann::ordered_json doc;
  doc["labels"] = labels;
  doc["counts"] = counts;
  return doc;
}

ConfusionMatrix ConfusionMatrix::from_json(const nlohmann::json& doc) {
  try {
    ConfusionMatrix cm;
    cm.labels = doc.at("labels").get<std::vector<std::string>>();
    cm.counts = doc.at("counts").get<std::vector<std::vector<long>>>();
    if (cm.counts.size() != cm.labels.size())
      raise(ErrorCode::Parse, "confusion matrix shape mismatch");
    for (const auto& row : cm.counts)
      if (row.size() != cm.labels.size())
        raise(ErrorCode::Parse, "confusion matrix shape mismatch");
    return cm;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Parse, std::string("malformed confusion matrix: ") + e.what());
  }
}

ConfusionMatrix confusion(const std::vector<std::string>& preds,
                          const std::vector<std::string>& golds,
                          const std::vector<std::string>& label_set) {
  check_paired(preds, golds);
  if (label_set.empty()) raise(ErrorCode::Argument, "empty label set");
  ConfusionMatrix cm;
  cm.labels = sorted_unique(label_set);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < cm.labels.size(); ++i) index[cm.labels[i]] = i;
  cm.counts.assign(cm.labels.size(), std::vector<long>(cm.labels.size(), 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto g = index.find(golds[i]);
    if (g == index.end()) raise(ErrorCode::Argument, "gold label outside label set: " + golds[i]);
    auto p = index.find(preds[i]);
    if (p == index.end())
      raise(ErrorCode::Argument, "predicted label outside label set: " + preds[i]);
    ++cm.counts[g->second][p->second];
  }
  return cm;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["setting"] = setting;
  doc["source_dataset"] = source_dataset;
  doc["target_dataset"] = target_dataset;
  doc["n_windows"] = n_windows;
  doc["accuracy"] = accuracy;
  doc["macro_f1"] = macro_f1;
  doc["category_accuracy"] = category_accuracy;
  doc["confusion"] = confusion.to_json();
  doc["config_fingerprint"] = config_fingerprint;
  return doc;
}

EvalReport EvalReport::from_json(const nlohmann::json& doc) {
  try {
    EvalReport r;
    r.setting = doc.at("setting").get<std::string>();
    r.source_dataset = doc.at("source_dataset").get<std::string>();
    r.target_dataset = doc.at("target_dataset").get<std::string>();
    r.n_windows = doc.at("n_windows").get<long>();
    r.accuracy = doc.at("accuracy").get<double>();
    r.macro_f1 = doc.at("macro_f1").get<double>();
    r.category_accuracy = doc.at("category_accuracy").get<double>();
    r.confusion = ConfusionMatrix::from_json(doc.at("confusion"));
    r.config_fingerprint = doc.at("config_fingerprint").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Parse, std::string("malformed eval report: ") + e.what());
  }
}

EvalReport evaluate_predictions(const std::string& source_dataset,
                                const std::string& target_dataset,
                                const std::vector<std::string>& preds,
                                const std::vector<std::string>& golds,
                                const std::vector<std::string>& label_set,
                                const CategoryTable& categories,
                                const std::string& config_fingerprint) {
  EvalReport report;
  report.setting = source_dataset + "->" + target_dataset;
  report.source_dataset = source_dataset;
  report.target_dataset = target_dataset;
  report.n_windows = static_cast<long>(preds.size());
  report.accuracy = accuracy(preds, golds);
  report.macro_f1 = macro_f1(preds, golds, label_set);
  report.category_accuracy = category_accuracy(preds, golds, categories);
  report.confusion = confusion(preds, golds, label_set);
  report.config_fingerprint = config_fingerprint;
  return report;
}

EmbeddingVector raw_features(const IMUWindow& window) {
  const stats::WindowStats s = stats::compute_stats(window);
  EmbeddingVector v(5 * kNumChannels);
  for (int c = 0; c < kNumChannels; ++c) {
    v(5 * c + 0) = s.mean[c];
    v(5 * c + 1) = s.std_dev[c];
    v(5 * c + 2) = s.amplitude[c];
    v(5 * c + 3) = s.dominant_freq_hz[c];
    v(5 * c + 4) = s.periodicity[c];
  }
  return v;
}

nlohmann::ordered_json KlReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["dataset_a"] = dataset_a;
  doc["dataset_b"] = dataset_b;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json r;
    r["activity"] = row.activity;
    if (row.skipped) {
      r["skipped"] = true;
      r["warning"] = row.warning;
    } else {
      r["raw_kl"] = row.raw_kl;
      r["embedding_kl"] = row.embedding_kl;
    }
    doc["rows"].push_back(std::move(r));
  }
  doc["raw_avg"] = raw_avg;
  doc["embedding_avg"] = embedding_avg;
  return doc;
}

std::string KlReport::to_csv() const {
  std::ostringstream out;
  out << "activity,raw_kl,embedding_kl\n";
  for (const auto& row : rows) {
    if (row.skipped) continue;
    out << row.activity << ',' << csv_num(row.raw_kl) << ',' << csv_num(row.embedding_kl) << '\n';
  }
  out << "average," << csv_num(raw_avg) << ',' << csv_num(embedding_avg) << '\n';
  return out.str();
}

namespace {

void check_samples(const EvalSamples& s) {
  if (s.windows.empty()) raise(ErrorCode::Argument, "dataset " + s.dataset_id + " has no windows");
  if (s.windows.size() != s.labels.size() || s.windows.size() != s.embeddings.size())
    raise(ErrorCode::Argument,
          "dataset " + s.dataset_id + ": windows, embeddings and labels differ in length");
}

}  // namespace

KlReport kl_report(const EvalSamples& a, const EvalSamples& b) {
  check_samples(a);
  check_samples(b);
  KlReport report;
  report.dataset_a = a.dataset_id;
  report.dataset_b = b.dataset_id;

  std::set<std::string> activities(a.labels.begin(), a.labels.end());
  activities.insert(b.labels.begin(), b.labels.end());

  double raw_sum = 0.0, emb_sum = 0.0;
  std::size_t scored = 0;
  for (const auto& activity : activities) {
    std::vector<filter::Embedding> raw_a, raw_b, emb_a, emb_b;
    for (std::size_t i = 0; i < a.labels.size(); ++i)
      if (a.labels[i] == activity) {
        raw_a.push_back(raw_features(a.windows[i]));
        emb_a.push_back(a.embeddings[i]);
      }
    for (std::size_t i = 0; i < b.labels.size(); ++i)
      if (b.labels[i] == activity) {
        raw_b.push_back(raw_features(b.windows[i]));
        emb_b.push_back(b.embeddings[i]);
      }
    KlRow row;
    row.activity = activity;
    if (raw_a.size() < 2 || raw_b.size() < 2) {
      row.skipped = true;
      row.warning = "fewer than 2 samples in " +
                    (raw_a.size() < 2 ? a.dataset_id : b.dataset_id) + " (" +
                    std::to_string(raw_a.size()) + " vs " + std::to_string(raw_b.size()) + ")";
    } else {
      row.raw_kl = filter::estimate_kl(raw_a, raw_b);
      row.embedding_kl = filter::estimate_kl(emb_a, emb_b);
      raw_sum += row.raw_kl;
      emb_sum += row.embedding_kl;
      ++scored;
    }
    report.rows.push_back(std::move(row));
  }
  if (scored > 0) {
    report.raw_avg = raw_sum / static_cast<double>(scored);
    report.embedding_avg = emb_sum / static_cast<double>(scored);
  }
  return report;
}

const char* kCrossDatasetCsvHeader =
    "setting,source,target,n_windows,accuracy,macro_f1,category_accuracy";

namespace {

std::string summary_rows(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << kCrossDatasetCsvHeader << '\n';
  double acc = 0.0, f1 = 0.0, cat = 0.0;
  long total = 0;
  for (const auto& r : reports) {
    out << r.setting << ',' << r.source_dataset << ',' << r.target_dataset << ','
        << r.n_windows << ',' << csv_num(r.accuracy) << ',' << csv_num(r.macro_f1) << ','
        << csv_num(r.category_accuracy) << '\n';
    acc += r.accuracy;
    f1 += r.macro_f1;
    cat += r.category_accuracy;
    total += r.n_windows;
  }
  if (!reports.empty()) {
    const double n = static_cast<double>(reports.size());
    out << "average,,," << total << ',' << csv_num(acc / n) << ',' << csv_num(f1 / n) << ','
        << csv_num(cat / n) << '\n';
  }
  return out.str();
}

std::vector<std::pair<std::string, std::string>> ordered_pairs(
    const std::vector<std::string>& dataset_ids) {
  if (dataset_ids.size() < 2)
    raise(ErrorCode::Argument, "cross-dataset protocol needs at least 2 datasets");
  std::set<std::string> seen(dataset_ids.begin(), dataset_ids.end());
  if (seen.size() != dataset_ids.size())
    raise(ErrorCode::Argument, "duplicate dataset ids in protocol");
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& source : dataset_ids)
    for (const auto& target : dataset_ids)
      if (source != target) pairs.emplace_back(source, target);
  return pairs;
}

}  // namespace

std::string CrossDatasetOutcome::to_table_csv() const { return summary_rows(reports); }

nlohmann::ordered_json CrossDatasetOutcome::to_json() const {
  nlohmann::ordered_json doc;
  doc["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) doc["reports"].push_back(r.to_json());
  doc["failures"] = failures;
  return doc;
}

CrossDatasetOutcome run_cross_dataset(const std::vector<std::string>& dataset_ids,
                                      const PairRunner& run_pair) {
  if (!run_pair) raise(ErrorCode::Argument, "null pair runner");
  CrossDatasetOutcome outcome;
  for (const auto& [source, target] : ordered_pairs(dataset_ids)) {
    try {
      outcome.reports.push_back(run_pair(source, target));
    } catch (const Error& e) {
      outcome.failures.push_back(source + "->" + target + ": " + e.what());
    }
  }
  return outcome;
}

std::string NewActivityOutcome::to_table_csv() const { return summary_rows(reports); }

nlohmann::ordered_json NewActivityOutcome::to_json() const {
  nlohmann::ordered_json doc;
  doc["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) doc["reports"].push_back(r.to_json());
  doc["skipped"] = skipped;
  doc["failures"] = failures;
  return doc;
}

NewActivityOutcome run_new_activity(
    const std::vector<std::string>& dataset_ids,
    const std::map<std::string, std::vector<std::string>>& dataset_labels,
    const std::vector<std::string>& common, const NewActivityRunner& run_pair) {
  if (!run_pair) raise(ErrorCode::Argument, "null pair runner");
  if (common.empty()) raise(ErrorCode::Argument, "empty common-activity set");
  std::set<std::string> shared(common.begin(), common.end());
  NewActivityOutcome outcome;
  for (const auto& [source, target] : ordered_pairs(dataset_ids)) {
    auto it = dataset_labels.find(target);
    if (it == dataset_labels.end())
      raise(ErrorCode::Argument, "no label inventory for dataset " + target);
    std::set<std::string> fresh;
    for (const auto& label : it->second)
      if (!shared.count(label)) fresh.insert(label);
    if (fresh.empty()) {
      outcome.skipped.push_back(source + "->" + target + ": no new activities in target");
      continue;
    }
    try {
      outcome.reports.push_back(
          run_pair(source, target, {fresh.begin(), fresh.end()}));
    } catch (const Error& e) {
      outcome.failures.push_back(source + "->" + target + ": " + e.what());
    }
  }
  return outcome;
}

}  // namespace lanhar::eval
