#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanhar/interpret.hpp"

namespace lanhar::filter {

using Embedding = Eigen::VectorXd;

// Closed-form KL divergence between diagonal Gaussians fitted to each set
// (per-dimension mean and population variance, variance floored at 1e-6).
// Needs at least two samples per set. Asymmetric, non-negative, and exactly
// zero when the fitted moments coincide.
double estimate_kl(const std::vector<Embedding>& set_p, const std::vector<Embedding>& set_q);

struct FilterConfig {
  int k = 2;                         // interpretations regenerated per round
  int max_iterations = 5;
  int patience = 3;                  // consecutive low-improvement rounds before stopping
  double min_rel_improvement = 0.01;
  uint64_t seed = 0;
  void validate() const;
};

struct FilterItem {
  std::string id;  // interpretation target id, unique within an activity
  Embedding embedding;
};

// Working state for one activity: its interpretations split into two fixed
// halves whose mutual KL divergence measures interpretation consistency.
struct FilterState {
  std::string activity;
  std::vector<FilterItem> part_a;
  std::vector<FilterItem> part_b;
  std::vector<std::string> selection_set;  // most recent round's selection
  std::vector<double> kl_history;          // non-increasing across accepted rounds
  int iteration = 0;

  double current_kl() const;
};

// Greedy selection of the k samples whose removal most reduces the KL
// divergence between the two parts; ties go to the lowest id. Requires
// |part_a| + |part_b| > k + 4 so enough remains to fit both Gaussians; no
// part is ever drained below two samples.
std::vector<std::string> select_worst_k(const FilterState& state, const FilterConfig& config);

using RegenFn = std::function<interpret::SemanticInterpretation(const std::string& id)>;
using EmbedFn = std::function<Embedding(const std::string& text)>;

struct RoundOutcome {
  FilterState state;
  std::vector<std::string> selected;  // greedy order
  std::vector<interpret::SemanticInterpretation> accepted_records;
  int accepted = 0;
  int rejected = 0;
  int failed = 0;  // regeneration raised; original retained
};

// One filter round: select the k most harmful interpretations, regenerate
// each, and accept a replacement only when the overall KL strictly
// decreases. Acceptance is decided serially in id order.
RoundOutcome run_filter_round(const FilterState& state, const FilterConfig& config,
                              const RegenFn& regen, const EmbedFn& embed);

struct ActivityReport {
  std::string activity;
  bool skipped = false;
  std::string warning;  // set when skipped
  std::vector<double> kl_history;
  std::vector<std::vector<std::string>> selected_per_round;
  int accepted = 0;
  int rejected = 0;
  int failed = 0;
};

using InterpretationCorpus = std::map<std::string, std::vector<interpret::SemanticInterpretation>>;

struct FilterResult {
  InterpretationCorpus corpus;  // filtered: accepted regenerations applied
  std::vector<ActivityReport> reports;
  nlohmann::ordered_json report_json() const;
};

// Full iterative loop over a labeled interpretation corpus. Activities with
// fewer than k + 6 interpretations are skipped with a warning entry; the
// rest run rounds until max_iterations or `patience` consecutive rounds with
// relative improvement below min_rel_improvement.
FilterResult run_filter(const InterpretationCorpus& corpus, const FilterConfig& config,
                        const RegenFn& regen, const EmbedFn& embed);

}  // namespace lanhar::filter
