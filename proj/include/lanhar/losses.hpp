#pragma once

#include <vector>

#include "lanhar/nn/ops.hpp"
#include "lanhar/types.hpp"
#include "lanhar/util.hpp"

namespace lanhar::losses {

// Plain (non-graph) cosine similarity for inference paths.
double cosine_similarity(const EmbeddingVector& u, const EmbeddingVector& v);

// Symmetric two-term InfoNCE over cosine similarities: mean cross entropy of
// matching rows plus mean cross entropy of matching columns. Zero at N = 1.
nn::Var loss_align(nn::Tape& t, nn::Var h, nn::Var z, double tau);

// Frozen-target variant: z enters the graph as a constant, so no gradient can
// reach whatever produced it.
nn::Var loss_sensor(nn::Tape& t, nn::Var e, const nn::Matrix& z_frozen, double tau);

struct Triple {
  int same_a;
  int same_b;
  int cross;
};

// All (i, j, k) with group[i] == group[j], i != j, group[k] != group[i], in
// lexicographic order; uniformly subsampled without replacement above cap.
std::vector<Triple> group_triples(const std::vector<int>& group_ids, int cap, Rng& rng);

// Mean of -ln sigmoid(s(same pair) - s(cross pair)) over the triples, on
// cosine similarities of the rows of e.
nn::Var loss_pairwise_triples(nn::Tape& t, nn::Var e, const std::vector<Triple>& triples);

struct PairwiseTerm {
  nn::Var loss;      // zero constant when skipped
  bool skipped = false;
};

// Category-similarity term (used for both interpretation kinds).
PairwiseTerm loss_pairwise_category(nn::Tape& t, nn::Var e, const std::vector<int>& category_ids,
                                    int cap, Rng& rng);

// Same-label description-variant term.
PairwiseTerm loss_label_variants(nn::Tape& t, nn::Var h, const std::vector<int>& label_ids,
                                 int cap, Rng& rng);

// Weighted total for logging: align + alpha * (ca1 + ca2 + ca3) + beta * re.
double loss_text_total(double align, double ca1, double ca2, double ca3, double re, double alpha,
                       double beta);

}  // namespace lanhar::losses
