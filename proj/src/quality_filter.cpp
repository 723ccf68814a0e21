#include "lanhar/quality_filter.hpp"

#include <algorithm>
#include <cmath>

#include "lanhar/error.hpp"
#include "lanhar/util.hpp"

namespace lanhar::filter {

namespace {

constexpr double kVarianceFloor = 1e-6;

struct Moments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;  // population variance, floored
};

Moments fit_moments(const std::vector<Embedding>& set) {
  const auto n = static_cast<Eigen::Index>(set.size());
  const Eigen::Index dim = set.front().size();
  Moments m;
  m.mean = Eigen::VectorXd::Zero(dim);
  for (const Embedding& v : set) m.mean += v;
  m.mean /= static_cast<double>(n);
  m.var = Eigen::VectorXd::Zero(dim);
  for (const Embedding& v : set) {
    const Eigen::VectorXd d = v - m.mean;
    m.var += d.cwiseProduct(d);
  }
  m.var /= static_cast<double>(n);
  m.var = m.var.cwiseMax(kVarianceFloor);
  return m;
}

}  // namespace

double estimate_kl(const std::vector<Embedding>& set_p, const std::vector<Embedding>& set_q) {
  if (set_p.size() < 2 || set_q.size() < 2) {
    raise(ErrorCode::Argument, "KL estimation needs at least two samples per set");
  }
  const Eigen::Index dim = set_p.front().size();
  if (dim < 1) raise(ErrorCode::Argument, "KL estimation needs non-empty embeddings");
  for (const auto* set : {&set_p, &set_q}) {
    for (const Embedding& v : *set) {
      if (v.size() != dim) raise(ErrorCode::Argument, "embedding dimension mismatch");
    }
  }

  const Moments p = fit_moments(set_p);
  const Moments q = fit_moments(set_q);
  double kl = 0.0;
  for (Eigen::Index d = 0; d < dim; ++d) {
    const double diff = p.mean[d] - q.mean[d];
    kl += 0.5 * std::log(q.var[d] / p.var[d]) +
          (p.var[d] + diff * diff) / (2.0 * q.var[d]) - 0.5;
  }
  if (!std::isfinite(kl)) raise(ErrorCode::Numeric, "KL estimate is not finite");
  return std::max(kl, 0.0);
}

void FilterConfig::validate() const {
  if (k < 1) raise(ErrorCode::Validation, "filter k must be >= 1");
  if (max_iterations < 1) raise(ErrorCode::Validation, "filter max_iterations must be >= 1");
  if (patience < 1) raise(ErrorCode::Validation, "filter patience must be >= 1");
  if (!(min_rel_improvement >= 0.0 && min_rel_improvement < 1.0)) {
    raise(ErrorCode::Validation, "filter min_rel_improvement must be in [0, 1)");
  }
}

namespace {

std::vector<Embedding> embeddings_of(const std::vector<FilterItem>& part) {
  std::vector<Embedding> out;
  out.reserve(part.size());
  for (const FilterItem& item : part) out.push_back(item.embedding);
  return out;
}

}  // namespace

double FilterState::current_kl() const {
  return estimate_kl(embeddings_of(part_a), embeddings_of(part_b));
}

std::vector<std::string> select_worst_k(const FilterState& state, const FilterConfig& config) {
  config.validate();
  const size_t total = state.part_a.size() + state.part_b.size();
  if (total <= static_cast<size_t>(config.k) + 4) {
    raise(ErrorCode::Argument,
          "selection needs more than k + 4 interpretations, got " + std::to_string(total));
  }

  std::vector<FilterItem> a = state.part_a;
  std::vector<FilterItem> b = state.part_b;
  std::vector<std::string> selected;
  for (int round = 0; round < config.k; ++round) {
    double best_kl = 0.0;
    int best_part = -1;
    size_t best_idx = 0;
    for (int part = 0; part < 2; ++part) {
      std::vector<FilterItem>& own = part == 0 ? a : b;
      if (own.size() <= 2) continue;  // a Gaussian fit needs two samples
      const std::vector<Embedding> other = embeddings_of(part == 0 ? b : a);
      for (size_t i = 0; i < own.size(); ++i) {
        std::vector<Embedding> reduced;
        reduced.reserve(own.size() - 1);
        for (size_t j = 0; j < own.size(); ++j) {
          if (j != i) reduced.push_back(own[j].embedding);
        }
        const double kl =
            part == 0 ? estimate_kl(reduced, other) : estimate_kl(other, reduced);
        const bool better =
            best_part < 0 || kl < best_kl ||
            (kl == best_kl && own[i].id < (best_part == 0 ? a : b)[best_idx].id);
        if (better) {
          best_kl = kl;
          best_part = part;
          best_idx = i;
        }
      }
    }
    if (best_part < 0) break;  // both parts at minimum size
    std::vector<FilterItem>& own = best_part == 0 ? a : b;
    selected.push_back(own[best_idx].id);
    own.erase(own.begin() + static_cast<std::ptrdiff_t>(best_idx));
  }
  return selected;
}

RoundOutcome run_filter_round(const FilterState& state, const FilterConfig& config,
                              const RegenFn& regen, const EmbedFn& embed) {
  config.validate();
  RoundOutcome out;
  out.state = state;
  out.selected = select_worst_k(state, config);

  double kl = out.state.current_kl();
  // Accept decisions run serially in id order so results do not depend on
  // the greedy selection order.
  std::vector<std::string> order = out.selected;
  std::sort(order.begin(), order.end());
  for (const std::string& id : order) {
    FilterItem* item = nullptr;
    for (FilterItem& cand : out.state.part_a) {
      if (cand.id == id) item = &cand;
    }
    for (FilterItem& cand : out.state.part_b) {
      if (cand.id == id) item = &cand;
    }
    if (item == nullptr) raise(ErrorCode::Internal, "selected id is not in either part: " + id);

    interpret::SemanticInterpretation replacement;
    Embedding candidate;
    try {
      replacement = regen(id);
      candidate = embed(replacement.text);
    } catch (const Error&) {
      ++out.failed;  // regeneration failed; the original interpretation stays
      continue;
    }
    const Embedding original = item->embedding;
    item->embedding = candidate;
    const double new_kl = out.state.current_kl();
    if (new_kl < kl) {
      kl = new_kl;
      out.accepted_records.push_back(replacement);
      ++out.accepted;
    } else {
      item->embedding = original;
      ++out.rejected;
    }
  }

  out.state.selection_set = out.selected;
  out.state.kl_history.push_back(kl);
  out.state.iteration += 1;
  return out;
}

nlohmann::ordered_json FilterResult::report_json() const {
  nlohmann::ordered_json activities = nlohmann::ordered_json::array();
  for (const ActivityReport& r : reports) {
    nlohmann::ordered_json entry{{"activity", r.activity}, {"skipped", r.skipped}};
    if (r.skipped) {
      entry["warning"] = r.warning;
    } else {
      entry["kl_history"] = r.kl_history;
      entry["initial_kl"] = r.kl_history.front();
      entry["final_kl"] = r.kl_history.back();
      entry["accepted"] = r.accepted;
      entry["rejected"] = r.rejected;
      entry["failed"] = r.failed;
      entry["selected_per_round"] = r.selected_per_round;
    }
    activities.push_back(std::move(entry));
  }
  return {{"activities", std::move(activities)}};
}

FilterResult run_filter(const InterpretationCorpus& corpus, const FilterConfig& config,
                        const RegenFn& regen, const EmbedFn& embed) {
  config.validate();
  FilterResult result;
  result.corpus = corpus;

  for (auto& [activity, interpretations] : result.corpus) {
    ActivityReport report;
    report.activity = activity;
    if (interpretations.size() < static_cast<size_t>(config.k) + 6) {
      report.skipped = true;
      report.warning = "needs at least " + std::to_string(config.k + 6) +
                       " interpretations, got " + std::to_string(interpretations.size());
      result.reports.push_back(std::move(report));
      continue;
    }

    // Fixed A/B split for the whole run; re-splitting each round would make
    // the KL history incomparable.
    std::vector<size_t> idx(interpretations.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(config.seed, "filter_split_" + activity));
    rng.shuffle(idx);

    FilterState state;
    state.activity = activity;
    for (size_t i = 0; i < idx.size(); ++i) {
      const interpret::SemanticInterpretation& si = interpretations[idx[i]];
      FilterItem item{si.target_id, embed(si.text)};
      (i < idx.size() / 2 ? state.part_a : state.part_b).push_back(std::move(item));
    }
    state.kl_history.push_back(state.current_kl());

    int low_improvement_streak = 0;
    for (int round = 0; round < config.max_iterations; ++round) {
      const double prev = state.kl_history.back();
      RoundOutcome outcome = run_filter_round(state, config, regen, embed);
      state = std::move(outcome.state);
      report.accepted += outcome.accepted;
      report.rejected += outcome.rejected;
      report.failed += outcome.failed;
      report.selected_per_round.push_back(outcome.selected);
      for (const interpret::SemanticInterpretation& si : outcome.accepted_records) {
        for (interpret::SemanticInterpretation& original : interpretations) {
          if (original.target_id == si.target_id) original = si;
        }
      }
      const double curr = state.kl_history.back();
      const double rel = prev > 0.0 ? (prev - curr) / prev : 0.0;
      if (rel < config.min_rel_improvement) {
        ++low_improvement_streak;
      } else {
        low_improvement_streak = 0;
      }
      if (low_improvement_streak >= config.patience) break;
    }

    report.kl_history = state.kl_history;
    result.reports.push_back(std::move(report));
  }
  return result;
}

}  // namespace lanhar::filter
