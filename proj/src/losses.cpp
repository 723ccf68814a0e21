#include "lanhar/losses.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "lanhar/error.hpp"

namespace lanhar::losses {

using nn::Tape;
using nn::Var;

double cosine_similarity(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.size() != v.size()) raise(ErrorCode::Argument, "cosine_similarity: dimension mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) {
    raise(ErrorCode::Argument, "cosine_similarity: zero vector has no direction");
  }
  return u.dot(v) / (nu * nv);
}

Var loss_align(Tape& t, Var h, Var z, double tau) {
  if (tau <= 0.0) raise(ErrorCode::Argument, "temperature must be positive");
  const auto n = t.value(h).rows();
  if (n != t.value(z).rows() || t.value(h).cols() != t.value(z).cols()) {
    raise(ErrorCode::Argument, "loss_align: embedding batches must have matching shapes");
  }
  Var logits = nn::scale(nn::matmul(nn::normalize_rows(h), nn::transpose(nn::normalize_rows(z))),
                         1.0 / tau);
  std::vector<int> targets(static_cast<size_t>(n));
  std::iota(targets.begin(), targets.end(), 0);
  Var row_term = nn::cross_entropy_rows(logits, targets);
  Var col_term = nn::cross_entropy_rows(nn::transpose(logits), targets);
  return nn::add(row_term, col_term);
}

nn::Var loss_sensor(Tape& t, Var e, const nn::Matrix& z_frozen, double tau) {
  Var z = t.input(z_frozen);
  return loss_align(t, e, z, tau);
}

std::vector<Triple> group_triples(const std::vector<int>& group_ids, int cap, Rng& rng) {
  const int n = static_cast<int>(group_ids.size());
  std::vector<Triple> all;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i || group_ids[static_cast<size_t>(j)] != group_ids[static_cast<size_t>(i)]) {
        continue;
      }
      for (int k = 0; k < n; ++k) {
        if (group_ids[static_cast<size_t>(k)] == group_ids[static_cast<size_t>(i)]) continue;
        all.push_back({i, j, k});
      }
    }
  }
  if (cap > 0 && static_cast<int>(all.size()) > cap) {
    // Partial Fisher-Yates: the first cap slots become a uniform sample
    // without replacement.
    for (int s = 0; s < cap; ++s) {
      const auto j = static_cast<size_t>(
          rng.uniform_int(s, static_cast<int64_t>(all.size()) - 1));
      std::swap(all[static_cast<size_t>(s)], all[j]);
    }
    all.resize(static_cast<size_t>(cap));
  }
  return all;
}

Var loss_pairwise_triples(Tape& t, Var e, const std::vector<Triple>& triples) {
  if (e.tape != &t) raise(ErrorCode::Argument, "loss_pairwise_triples: var not on this tape");
  if (triples.empty()) raise(ErrorCode::Argument, "loss_pairwise_triples: no triples");
  Var sims = nn::matmul(nn::normalize_rows(e), nn::transpose(nn::normalize_rows(e)));
  std::vector<int> rows_same, cols_same, rows_cross, cols_cross;
  rows_same.reserve(triples.size());
  for (const Triple& tr : triples) {
    rows_same.push_back(tr.same_a);
    cols_same.push_back(tr.same_b);
    rows_cross.push_back(tr.same_a);
    cols_cross.push_back(tr.cross);
  }
  Var s_same = nn::gather_entries(sims, rows_same, cols_same);
  Var s_cross = nn::gather_entries(sims, rows_cross, cols_cross);
  return nn::mean_all(nn::softplus(nn::scale(nn::sub(s_same, s_cross), -1.0)));
}

namespace {

PairwiseTerm pairwise_over_groups(Tape& t, Var e, const std::vector<int>& group_ids, int cap,
                                  Rng& rng) {
  if (static_cast<Eigen::Index>(group_ids.size()) != t.value(e).rows()) {
    raise(ErrorCode::Argument, "group id count must match embedding rows");
  }
  auto triples = group_triples(group_ids, cap, rng);
  if (triples.empty()) {
    return {t.input(nn::Matrix::Zero(1, 1)), true};
  }
  return {loss_pairwise_triples(t, e, triples), false};
}

}  // namespace

PairwiseTerm loss_pairwise_category(Tape& t, Var e, const std::vector<int>& category_ids, int cap,
                                    Rng& rng) {
  return pairwise_over_groups(t, e, category_ids, cap, rng);
}

PairwiseTerm loss_label_variants(Tape& t, Var h, const std::vector<int>& label_ids, int cap,
                                 Rng& rng) {
  return pairwise_over_groups(t, h, label_ids, cap, rng);
}

double loss_text_total(double align, double ca1, double ca2, double ca3, double re, double alpha,
                       double beta) {
  const auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) {
      raise(ErrorCode::Numeric, std::string("non-finite loss component: ") + name);
    }
  };
  check(align, "align");
  check(ca1, "ca1");
  check(ca2, "ca2");
  check(ca3, "ca3");
  check(re, "reconstruction");
  return align + alpha * (ca1 + ca2 + ca3) + beta * re;
}

}  // namespace lanhar::losses
