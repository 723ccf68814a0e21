#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lanhar/nn/tensor.hpp"

namespace lanhar::testing {

// Central finite differences against the tape's analytic gradients.
// build must construct a fresh graph from the current parameter values and
// return a scalar loss. Returns the worst relative error over all entries.
inline double grad_check(const std::function<nn::Var(nn::Tape&)>& build,
                         const std::vector<nn::Parameter*>& params, double h = 1e-5) {
  nn::Tape t0;
  nn::Var loss0 = build(t0);
  t0.backward(loss0);
  std::vector<nn::Matrix> analytic;
  analytic.reserve(params.size());
  for (nn::Parameter* p : params) {
    analytic.push_back(p->grad);
    p->zero_grad();
  }

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    nn::Parameter& p = *params[pi];
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const double saved = p.value(r, c);
        p.value(r, c) = saved + h;
        nn::Tape tp;
        const double fp = tp.value(build(tp))(0, 0);
        p.value(r, c) = saved - h;
        nn::Tape tm;
        const double fm = tm.value(build(tm))(0, 0);
        p.value(r, c) = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[pi](r, c);
        const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
        worst = std::max(worst, std::abs(a - numeric) / denom);
      }
    }
  }
  return worst;
}

}  // namespace lanhar::testing
