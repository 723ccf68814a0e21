#include "lanhar/nn/tensor.hpp"

#include "lanhar/error.hpp"

namespace lanhar::nn {

Var make_node(Tape& t, Matrix value, std::function<void(Tape&, int)> backward) {
  Tape::Node node;
  node.value = std::move(value);
  node.backward = std::move(backward);
  t.nodes_.push_back(std::move(node));
  return Var{&t, static_cast<int>(t.nodes_.size() - 1)};
}

Var Tape::input(Matrix v) { return make_node(*this, std::move(v), nullptr); }

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var{this, it->second};
  }
  Var v = make_node(*this, p.value, nullptr);
  nodes_[static_cast<size_t>(v.id)].bound = &p;
  param_nodes_[&p] = v.id;
  return v;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) raise(ErrorCode::Argument, "loss var belongs to a different tape");
  auto& ln = nodes_[static_cast<size_t>(loss.id)];
  if (ln.value.rows() != 1 || ln.value.cols() != 1) {
    raise(ErrorCode::Argument, "backward requires a scalar (1x1) loss");
  }
  for (auto& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  ln.grad(0, 0) = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    auto& n = nodes_[static_cast<size_t>(i)];
    if (n.backward) n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.bound) n.bound->grad += n.grad;
  }
}

}  // namespace lanhar::nn
