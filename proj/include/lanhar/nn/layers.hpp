#pragma once

#include <string>
#include <vector>

#include "lanhar/nn/ops.hpp"
#include "lanhar/nn/tensor.hpp"
#include "lanhar/util.hpp"

namespace lanhar::nn {

Matrix normal_init(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 0.02);

// Fixed sinusoidal positional encoding, rows = positions.
Matrix sinusoidal_positions(int length, int d_model);

struct Linear {
  Parameter w;  // in x out
  Parameter b;  // 1 x out

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng);
  Var forward(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);
};

struct LayerNorm {
  Parameter gamma;  // 1 x d
  Parameter beta;   // 1 x d

  LayerNorm() = default;
  LayerNorm(const std::string& name, int d);
  Var forward(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);
};

struct MultiHeadSelfAttention {
  int n_heads = 1;
  Linear wq, wk, wv, wo;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(const std::string& name, int d_model, int heads, Rng& rng);
  Var forward(Tape& t, Var x, bool causal);
  void collect(std::vector<Parameter*>& out);
};

struct FeedForward {
  Linear lin1, lin2;  // d -> 4d -> d

  FeedForward() = default;
  FeedForward(const std::string& name, int d_model, Rng& rng);
  Var forward(Tape& t, Var x);
  void collect(std::vector<Parameter*>& out);
};

// Post-norm transformer block: attention and feed-forward sublayers each
// followed by a residual add and layer norm.
struct TransformerLayer {
  MultiHeadSelfAttention attn;
  LayerNorm ln1, ln2;
  FeedForward ffn;

  TransformerLayer() = default;
  TransformerLayer(const std::string& name, int d_model, int heads, Rng& rng);
  Var forward(Tape& t, Var x, bool causal = false);
  void collect(std::vector<Parameter*>& out);
};

}  // namespace lanhar::nn
