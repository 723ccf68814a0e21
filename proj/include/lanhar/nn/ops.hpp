#pragma once

#include <vector>

#include "lanhar/nn/tensor.hpp"

namespace lanhar::nn {

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);                    // same shape
Var add_row_broadcast(Var a, Var row);    // row is 1 x N
Var scale(Var a, double k);
Var add_const(Var a, double k);
Var hadamard(Var a, Var b);
Var sub(Var a, Var b);

Var gelu(Var a);
Var softplus(Var a);  // ln(1 + e^x), numerically stable

// Row-wise softmax. With causal = true, entries with col > row are masked out
// (the matrix must be square, scores over positions).
Var softmax_rows(Var a, bool causal = false);

// Per-row layer norm with learned gain/bias (both 1 x D), population variance.
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

Var mean_rows(Var a);   // M x N -> 1 x N
Var mean_all(Var a);    // M x N -> 1 x 1
Var sum_all(Var a);     // M x N -> 1 x 1

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, int start, int count);
Var slice_cols(Var a, int start, int count);

// out.row(k) = a.row(indices[k]); duplicate indices accumulate gradient.
Var gather_rows(Var a, std::vector<int> indices);

// K x 1 column of a(rows[k], cols[k]).
Var gather_entries(Var a, std::vector<int> rows, std::vector<int> cols);

// Unit-normalize each row (L2). Rows with norm below eps are left scaled by
// 1/eps to stay differentiable.
Var normalize_rows(Var a, double eps = 1e-12);

// Mean token-level cross entropy of row-wise logits against integer targets.
Var cross_entropy_rows(Var logits, std::vector<int> targets);

}  // namespace lanhar::nn
