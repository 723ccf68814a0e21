#include "lanhar/nn/ops.hpp"

#include <cmath>
#include <string>

#include "lanhar/error.hpp"

namespace lanhar::nn {

namespace {

Matrix& val(Tape& t, int id) { return t.value(Var{&t, id}); }
Matrix& grd(Tape& t, int id) { return t.grad(Var{&t, id}); }

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) raise(ErrorCode::Argument, std::string(op) + ": vars on different tapes");
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  raise(ErrorCode::Argument, std::string(op) + ": incompatible shapes " +
                                 std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                 " vs " + std::to_string(b.rows()) + "x" +
                                 std::to_string(b.cols()));
}

}  // namespace

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  const int ai = a.id, bi = b.id;
  return make_node(t, av * bv, [ai, bi](Tape& tp, int self) {
    const Matrix& g = grd(tp, self);
    grd(tp, ai) += g * val(tp, bi).transpose();
    grd(tp, bi) += val(tp, ai).transpose() * g;
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  const int ai = a.id;
  return make_node(t, t.value(a).transpose(), [ai](Tape& tp, int self) {
    grd(tp, ai) += grd(tp, self).transpose();
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("add", av, bv);
  const int ai = a.id, bi = b.id;
  return make_node(t, av + bv, [ai, bi](Tape& tp, int self) {
    grd(tp, ai) += grd(tp, self);
    grd(tp, bi) += grd(tp, self);
  });
}

Var add_row_broadcast(Var a, Var row) {
  check_same_tape(a, row, "add_row_broadcast");
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error("add_row_broadcast", av, rv);
  Matrix out = av;
  out.rowwise() += rv.row(0);
  const int ai = a.id, ri = row.id;
  return make_node(t, std::move(out), [ai, ri](Tape& tp, int self) {
    const Matrix& g = grd(tp, self);
    grd(tp, ai) += g;
    grd(tp, ri) += g.colwise().sum();
  });
}

Var scale(Var a, double k) {
  Tape& t = *a.tape;
  const int ai = a.id;
  return make_node(t, t.value(a) * k, [ai, k](Tape& tp, int self) {
    grd(tp, ai) += k * grd(tp, self);
  });
}

Var add_const(Var a, double k) {
  Tape& t = *a.tape;
  const int ai = a.id;
  return make_node(t, t.value(a).array() + k, [ai](Tape& tp, int self) {
    grd(tp, ai) += grd(tp, self);
  });
}

Var hadamard(Var a, Var b) {
  check_same_tape(a, b, "hadamard");
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) shape_error("hadamard", av, bv);
  const int ai = a.id, bi = b.id;
  return make_node(t, av.cwiseProduct(bv), [ai, bi](Tape& tp, int self) {
    const Matrix& g = grd(tp, self);
    grd(tp, ai) += g.cwiseProduct(val(tp, bi));
    grd(tp, bi) += g.cwiseProduct(val(tp, ai));
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var gelu(Var a) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  Matrix out = av.unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); });
  const int ai = a.id;
  return make_node(t, std::move(out), [ai](Tape& tp, int self) {
    const Matrix& x = val(tp, ai);
    const Matrix& g = grd(tp, self);
    grd(tp, ai) += g.cwiseProduct(x.unaryExpr([](double v) {
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
      return cdf + v * pdf;
    }));
  });
}

Var softplus(Var a) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  Matrix out = av.unaryExpr(
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  const int ai = a.id;
  return make_node(t, std::move(out), [ai](Tape& tp, int self) {
    const Matrix& x = val(tp, ai);
    const Matrix& g = grd(tp, self);
    grd(tp, ai) += g.cwiseProduct(
        x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }));
  });
}

Var softmax_rows(Var a, bool causal) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  if (causal && av.rows() != av.cols()) {
    raise(ErrorCode::Argument, "causal softmax requires a square score matrix");
  }
  Matrix out(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const Eigen::Index limit = causal ? r + 1 : av.cols();
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < limit; ++c) mx = std::max(mx, av(r, c));
    double denom = 0.0;
    for (Eigen::Index c = 0; c < limit; ++c) denom += std::exp(av(r, c) - mx);
    for (Eigen::Index c = 0; c < av.cols(); ++c) {
      out(r, c) = c < limit ? std::exp(av(r, c) - mx) / denom : 0.0;
    }
  }
  const int ai = a.id;
  return make_node(t, std::move(out), [ai](Tape& tp, int self) {
    const Matrix& y = val(tp, self);
    const Matrix& g = grd(tp, self);
    // Masked positions have y == 0 so they contribute nothing.
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = y.row(r).dot(g.row(r));
      grd(tp, ai).row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
    }
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x, gamma, "layer_norm_rows");
  check_same_tape(x, beta, "layer_norm_rows");
  Tape& t = *x.tape;
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gamma);
  const Matrix& bv = t.value(beta);
  const Eigen::Index d = xv.cols();
  if (gv.rows() != 1 || gv.cols() != d) shape_error("layer_norm_rows gamma", xv, gv);
  if (bv.rows() != 1 || bv.cols() != d) shape_error("layer_norm_rows beta", xv, bv);

  Matrix xhat(xv.rows(), d);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = (xv.row(r).array() - mu) * is;
  }
  Matrix out(xv.rows(), d);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    out.row(r) = xhat.row(r).cwiseProduct(gv.row(0)) + bv.row(0);
  }
  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return make_node(
      t, std::move(out),
      [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
        const Matrix& g = grd(tp, self);
        const Matrix& gam = val(tp, gi);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const Eigen::RowVectorXd gy = g.row(r).cwiseProduct(gam.row(0));
          const double m1 = gy.mean();
          const double m2 = gy.cwiseProduct(xhat.row(r)).mean();
          grd(tp, xi).row(r) +=
              inv_std(r) * (gy.array() - m1 - xhat.row(r).array() * m2).matrix();
          grd(tp, gi).row(0) += g.row(r).cwiseProduct(xhat.row(r));
          grd(tp, bi).row(0) += g.row(r);
        }
      });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  Matrix out = av.colwise().mean();
  const int ai = a.id;
  const double n = static_cast<double>(av.rows());
  return make_node(t, std::move(out), [ai, n](Tape& tp, int self) {
    const Matrix& g = grd(tp, self);
    grd(tp, ai).rowwise() += (g.row(0) / n);
  });
}

Var mean_all(Var a) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  Matrix out(1, 1);
  out(0, 0) = av.mean();
  const int ai = a.id;
  const double n = static_cast<double>(av.size());
  return make_node(t, std::move(out), [ai, n](Tape& tp, int self) {
    grd(tp, ai).array() += grd(tp, self)(0, 0) / n;
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = t.value(a).sum();
  const int ai = a.id;
  return make_node(t, std::move(out), [ai](Tape& tp, int self) {
    grd(tp, ai).array() += grd(tp, self)(0, 0);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) raise(ErrorCode::Argument, "concat_rows: empty part list");
  Tape& t = *parts[0].tape;
  Eigen::Index rows = 0;
  const Eigen::Index cols = t.value(parts[0]).cols();
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (Var p : parts) {
    check_same_tape(parts[0], p, "concat_rows");
    const Matrix& pv = t.value(p);
    if (pv.cols() != cols) shape_error("concat_rows", t.value(parts[0]), pv);
    rows += pv.rows();
    ids.push_back(p.id);
    heights.push_back(pv.rows());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (size_t i = 0; i < ids.size(); ++i) {
    out.middleRows(at, heights[i]) = val(t, ids[i]);
    at += heights[i];
  }
  return make_node(t, std::move(out), [ids, heights](Tape& tp, int self) {
    const Matrix& g = grd(tp, self);
    Eigen::Index at = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      grd(tp, ids[i]) += g.middleRows(at, heights[i]);
      at += heights[i];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) raise(ErrorCode::Argument, "concat_cols: empty part list");
  Tape& t = *parts[0].tape;
  Eigen::Index cols = 0;
  const Eigen::Index rows = t.value(parts[0]).rows();
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (Var p : parts) {
    check_same_tape(parts[0], p, "concat_cols");
    const Matrix& pv = t.value(p);
    if (pv.rows() != rows) shape_error("concat_cols", t.value(parts[0]), pv);
    cols += pv.cols();
    ids.push_back(p.id);
    widths.push_back(pv.cols());
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (size_t i = 0; i < ids.size(); ++i) {
    out.middleCols(at, widths[i]) = val(t, ids[i]);
    at += widths[i];
  }
  return make_node(t, std::move(out), [ids, widths](Tape& tp, int self) {
    const Matrix& g = grd(tp, self);
    Eigen::Index at = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      grd(tp, ids[i]) += g.middleCols(at, widths[i]);
      at += widths[i];
    }
  });
}

Var slice_rows(Var a, int start, int count) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  if (start < 0 || count < 1 || start + count > av.rows()) {
    raise(ErrorCode::Argument, "slice_rows: range out of bounds");
  }
  const int ai = a.id;
  return make_node(t, av.middleRows(start, count), [ai, start, count](Tape& tp, int self) {
    grd(tp, ai).middleRows(start, count) += grd(tp, self);
  });
}

Var slice_cols(Var a, int start, int count) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  if (start < 0 || count < 1 || start + count > av.cols()) {
    raise(ErrorCode::Argument, "slice_cols: range out of bounds");
  }
  const int ai = a.id;
  return make_node(t, av.middleCols(start, count), [ai, start, count](Tape& tp, int self) {
    grd(tp, ai).middleCols(start, count) += grd(tp, self);
  });
}

Var gather_rows(Var a, std::vector<int> indices) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  Matrix out(static_cast<Eigen::Index>(indices.size()), av.cols());
  for (size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0 || indices[k] >= av.rows()) {
      raise(ErrorCode::Argument, "gather_rows: index out of bounds");
    }
    out.row(static_cast<Eigen::Index>(k)) = av.row(indices[k]);
  }
  const int ai = a.id;
  return make_node(t, std::move(out), [ai, indices = std::move(indices)](Tape& tp, int self) {
    const Matrix& g = grd(tp, self);
    for (size_t k = 0; k < indices.size(); ++k) {
      grd(tp, ai).row(indices[k]) += g.row(static_cast<Eigen::Index>(k));
    }
  });
}

Var gather_entries(Var a, std::vector<int> rows, std::vector<int> cols) {
  if (rows.size() != cols.size()) {
    raise(ErrorCode::Argument, "gather_entries: rows/cols length mismatch");
  }
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  Matrix out(static_cast<Eigen::Index>(rows.size()), 1);
  for (size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= av.rows() || cols[k] < 0 || cols[k] >= av.cols()) {
      raise(ErrorCode::Argument, "gather_entries: index out of bounds");
    }
    out(static_cast<Eigen::Index>(k), 0) = av(rows[k], cols[k]);
  }
  const int ai = a.id;
  return make_node(t, std::move(out),
                   [ai, rows = std::move(rows), cols = std::move(cols)](Tape& tp, int self) {
                     const Matrix& g = grd(tp, self);
                     for (size_t k = 0; k < rows.size(); ++k) {
                       grd(tp, ai)(rows[k], cols[k]) += g(static_cast<Eigen::Index>(k), 0);
                     }
                   });
}

Var normalize_rows(Var a, double eps) {
  Tape& t = *a.tape;
  const Matrix& av = t.value(a);
  Matrix out(av.rows(), av.cols());
  Eigen::VectorXd norms(av.rows());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const double n = std::max(av.row(r).norm(), eps);
    norms(r) = n;
    out.row(r) = av.row(r) / n;
  }
  const int ai = a.id;
  return make_node(t, std::move(out), [ai, norms = std::move(norms)](Tape& tp, int self) {
    const Matrix& y = val(tp, self);
    const Matrix& g = grd(tp, self);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = y.row(r).dot(g.row(r));
      grd(tp, ai).row(r) += (g.row(r) - dot * y.row(r)) / norms(r);
    }
  });
}

Var cross_entropy_rows(Var logits, std::vector<int> targets) {
  Tape& t = *logits.tape;
  const Matrix& lv = t.value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != lv.rows()) {
    raise(ErrorCode::Argument, "cross_entropy_rows: one target per row required");
  }
  Matrix probs(lv.rows(), lv.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const int tgt = targets[static_cast<size_t>(r)];
    if (tgt < 0 || tgt >= lv.cols()) {
      raise(ErrorCode::Argument, "cross_entropy_rows: target out of range");
    }
    const double mx = lv.row(r).maxCoeff();
    const Eigen::RowVectorXd ex = (lv.row(r).array() - mx).exp();
    const double denom = ex.sum();
    probs.row(r) = ex / denom;
    loss -= (lv(r, tgt) - mx) - std::log(denom);
  }
  loss /= static_cast<double>(lv.rows());
  Matrix out(1, 1);
  out(0, 0) = loss;
  const int li = logits.id;
  const double n = static_cast<double>(lv.rows());
  return make_node(
      t, std::move(out),
      [li, n, probs = std::move(probs), targets = std::move(targets)](Tape& tp, int self) {
        const double g = grd(tp, self)(0, 0);
        Matrix d = probs;
        for (Eigen::Index r = 0; r < d.rows(); ++r) {
          d(r, targets[static_cast<size_t>(r)]) -= 1.0;
        }
        grd(tp, li) += (g / n) * d;
      });
}

}  // namespace lanhar::nn
