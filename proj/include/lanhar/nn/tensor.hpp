#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace lanhar::nn {

using Matrix = Eigen::MatrixXd;

// A named trainable tensor. Lives outside any tape; gradients accumulate here
// across a backward pass and are consumed by the optimizer.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

class Tape;

// Lightweight handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

// Reverse-mode autodiff over dense double matrices. Nodes are recorded in
// creation order, which is a valid topological order, so the backward sweep
// is a single reverse iteration. One tape per training step.
class Tape {
 public:
  Var input(Matrix v);
  Var param(Parameter& p);

  Matrix& value(Var v) { return nodes_[static_cast<size_t>(v.id)].value; }
  const Matrix& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  Matrix& grad(Var v) { return nodes_[static_cast<size_t>(v.id)].grad; }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape. loss must be 1x1.
  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

 private:
  friend Var make_node(Tape& t, Matrix value, std::function<void(Tape&, int)> backward);

  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, int)> backward;  // adds into parents' grads
    Parameter* bound = nullptr;                // set for param leaves
  };

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;  // one leaf per parameter
};

// Internal factory used by the op implementations.
Var make_node(Tape& t, Matrix value, std::function<void(Tape&, int)> backward);

}  // namespace lanhar::nn
