#include "lanhar/nn/layers.hpp"

#include <cmath>

#include "lanhar/error.hpp"

namespace lanhar::nn {

Matrix normal_init(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal() * stddev;
  }
  return m;
}

Matrix sinusoidal_positions(int length, int d_model) {
  Matrix pe = Matrix::Zero(length, d_model);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d_model; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d_model);
      pe(pos, i) = std::sin(angle);
      if (i + 1 < d_model) pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng)
    : w(name + ".w", normal_init(in, out, rng)), b(name + ".b", Matrix::Zero(1, out)) {}

Var Linear::forward(Tape& t, Var x) {
  return add_row_broadcast(matmul(x, t.param(w)), t.param(b));
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

LayerNorm::LayerNorm(const std::string& name, int d)
    : gamma(name + ".gamma", Matrix::Ones(1, d)), beta(name + ".beta", Matrix::Zero(1, d)) {}

Var LayerNorm::forward(Tape& t, Var x) {
  return layer_norm_rows(x, t.param(gamma), t.param(beta));
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

MultiHeadSelfAttention::MultiHeadSelfAttention(const std::string& name, int d_model, int heads,
                                               Rng& rng)
    : n_heads(heads),
      wq(name + ".wq", d_model, d_model, rng),
      wk(name + ".wk", d_model, d_model, rng),
      wv(name + ".wv", d_model, d_model, rng),
      wo(name + ".wo", d_model, d_model, rng) {
  if (heads < 1 || d_model % heads != 0) {
    raise(ErrorCode::Argument, "attention width must be divisible by head count");
  }
}

Var MultiHeadSelfAttention::forward(Tape& t, Var x, bool causal) {
  const int d_model = static_cast<int>(t.value(x).cols());
  const int dh = d_model / n_heads;
  Var q = wq.forward(t, x);
  Var k = wk.forward(t, x);
  Var v = wv.forward(t, x);
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < n_heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Var attn = softmax_rows(scores, causal);
    heads.push_back(matmul(attn, vh));
  }
  return wo.forward(t, concat_cols(heads));
}

void MultiHeadSelfAttention::collect(std::vector<Parameter*>& out) {
  wq.collect(out);
  wk.collect(out);
  wv.collect(out);
  wo.collect(out);
}

FeedForward::FeedForward(const std::string& name, int d_model, Rng& rng)
    : lin1(name + ".lin1", d_model, 4 * d_model, rng),
      lin2(name + ".lin2", 4 * d_model, d_model, rng) {}

Var FeedForward::forward(Tape& t, Var x) { return lin2.forward(t, gelu(lin1.forward(t, x))); }

void FeedForward::collect(std::vector<Parameter*>& out) {
  lin1.collect(out);
  lin2.collect(out);
}

TransformerLayer::TransformerLayer(const std::string& name, int d_model, int heads, Rng& rng)
    : attn(name + ".attn", d_model, heads, rng),
      ln1(name + ".ln1", d_model),
      ln2(name + ".ln2", d_model),
      ffn(name + ".ffn", d_model, rng) {}

Var TransformerLayer::forward(Tape& t, Var x, bool causal) {
  Var x_an = ln1.forward(t, add(x, attn.forward(t, x, causal)));
  return ln2.forward(t, add(ffn.forward(t, x_an), x_an));
}

void TransformerLayer::collect(std::vector<Parameter*>& out) {
  attn.collect(out);
  ln1.collect(out);
  ln2.collect(out);
  ffn.collect(out);
}

}  // namespace lanhar::nn
