#include "acr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "acr/error.hpp"

namespace acr {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddRowwise: return "add_rowwise";
    case OpKind::Relu: return "relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::AbsMean: return "abs_mean";
    case OpKind::SqMean: return "sq_mean";
    case OpKind::SmoothL1Mean: return "smooth_l1_mean";
    case OpKind::BceWithLogits: return "bce_with_logits";
    case OpKind::Slice: return "slice";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::Gather: return "gather";
    case OpKind::RowSums: return "row_sums";
    case OpKind::ScaleRowsTo: return "scale_rows_to";
    case OpKind::Reshape: return "reshape";
  }
  return "unknown";
}

Tape& Var::tape() const {
  if (!tape_) throw StateError("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor& param) {
  Node n;
  n.value = param;
  n.value.clear_grad();
  n.requires_grad = true;
  n.needs_grad = true;
  n.sink = &param;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(OpKind op, std::vector<std::size_t> inputs, Tensor value,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by " +
                         std::string(op_name(op)) + " " +
                         shape_str(value.shape()));
  }
  Node n;
  n.op = op;
  for (auto id : inputs) n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::retain(Var v) { nodes_.at(v.id()).retain = true; }

std::span<double> Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("loss belongs to another tape");
  if (backward_done_) {
    throw StateError("backward already ran on this tape; call reset_grads()");
  }
  if (!nodes_[loss.id()].value.is_scalar()) {
    throw ContractError("backward requires a scalar loss, got " +
                        shape_str(nodes_[loss.id()].value.shape()));
  }
  backward_done_ = true;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.op == OpKind::Leaf) {
      if (n.sink) {
        auto dst = n.sink->grad();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
      }
      continue;
    }
    n.backward(*this, i);
    if (!n.retain) {
      nodes_[i].grad.clear();
      nodes_[i].grad.shrink_to_fit();
    }
  }
}

void Tape::reset_grads() {
  for (auto& n : nodes_) n.grad.clear();
  backward_done_ = false;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (!backward_done_) throw StateError("gradient requested before backward");
  if (!n.retain && !n.requires_grad) {
    throw StateError("gradient of node " + std::to_string(v.id()) +
                     " was not retained");
  }
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return Tensor(n.value.shape(), n.grad);
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands on different tapes");
  return a.tape();
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " expects a matrix, got " +
                         shape_str(t.shape()));
  }
}

enum class Bcast { Same, AScalar, BScalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (a.is_scalar()) return Bcast::AScalar;
  if (b.is_scalar()) return Bcast::BScalar;
  throw DimensionError(std::string(what) + ": incompatible shapes " +
                       shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

const Shape& out_shape(const Tensor& a, const Tensor& b, Bcast k) {
  return k == Bcast::AScalar ? b.shape() : a.shape();
}

// Elementwise unary op from value and derivative functions.
template <typename F, typename D>
Var unary(OpKind op, Var a, F f, D df) {
  Tape& t = a.tape();
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  std::size_t ia = a.id();
  return t.record(op, {ia}, std::move(out), [ia, df](Tape& tp, std::size_t self) {
    if (!tp.needs_grad(ia)) return;
    const Tensor& xv = tp.value(ia);
    const Tensor& yv = tp.value(self);
    auto g = tp.grad_buffer(self);
    auto ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  });
}

// Scalar reduction of a pairwise elementwise loss: mean(phi(a - b)).
template <typename Phi, typename DPhi>
Var pair_mean(OpKind op, Var a, Var b, Phi phi, DPhi dphi) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() != y.shape()) {
    throw DimensionError(std::string(op_name(op)) + ": shape mismatch " +
                         shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += phi(x[i] - y[i]);
  const double inv = 1.0 / static_cast<double>(x.numel());
  std::size_t ia = a.id(), ib = b.id();
  return t.record(op, {ia, ib}, Tensor::scalar(acc * inv),
                  [ia, ib, inv, dphi](Tape& tp, std::size_t self) {
                    const double g = tp.grad_buffer(self)[0] * inv;
                    const Tensor& xv = tp.value(ia);
                    const Tensor& yv = tp.value(ib);
                    if (tp.needs_grad(ia)) {
                      auto ga = tp.grad_buffer(ia);
                      for (std::size_t i = 0; i < ga.size(); ++i)
                        ga[i] += g * dphi(xv[i] - yv[i]);
                    }
                    if (tp.needs_grad(ib)) {
                      auto gb = tp.grad_buffer(ib);
                      for (std::size_t i = 0; i < gb.size(); ++i)
                        gb[i] -= g * dphi(xv[i] - yv[i]);
                    }
                  });
}

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_matrix(x, "matmul");
  require_matrix(y, "matmul");
  const std::size_t m = x.dim(0), k = x.dim(1), p = y.dim(1);
  if (y.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(x.shape()) +
                         " x " + shape_str(y.shape()));
  }
  Tensor out({m, p});
  const double* xd = x.data().data();
  const double* yd = y.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = od + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double xv = xd[i * k + kk];
      const double* yrow = yd + kk * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += xv * yrow[j];
    }
  }
  std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::MatMul, {ia, ib}, std::move(out),
                  [ia, ib, m, k, p](Tape& tp, std::size_t self) {
                    auto g = tp.grad_buffer(self);
                    const double* gd = g.data();
                    if (tp.needs_grad(ia)) {
                      // dA = G * B^T
                      const double* bd = tp.value(ib).data().data();
                      std::vector<double> bt(p * k);
                      for (std::size_t kk = 0; kk < k; ++kk)
                        for (std::size_t j = 0; j < p; ++j) bt[j * k + kk] = bd[kk * p + j];
                      double* ga = tp.grad_buffer(ia).data();
                      for (std::size_t i = 0; i < m; ++i) {
                        const double* grow = gd + i * p;
                        double* garow = ga + i * k;
                        for (std::size_t j = 0; j < p; ++j) {
                          const double gv = grow[j];
                          const double* btrow = bt.data() + j * k;
                          for (std::size_t kk = 0; kk < k; ++kk) garow[kk] += gv * btrow[kk];
                        }
                      }
                    }
                    if (tp.needs_grad(ib)) {
                      // dB = A^T * G
                      const double* ad = tp.value(ia).data().data();
                      double* gb = tp.grad_buffer(ib).data();
                      for (std::size_t i = 0; i < m; ++i) {
                        const double* grow = gd + i * p;
                        for (std::size_t kk = 0; kk < k; ++kk) {
                          const double av = ad[i * k + kk];
                          double* gbrow = gb + kk * p;
                          for (std::size_t j = 0; j < p; ++j) gbrow[j] += av * grow[j];
                        }
                      }
                    }
                  });
}

Var transpose(Var a) {
  Tape& t = a.tape();
  const Tensor& x = a.value();
  require_matrix(x, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  std::size_t ia = a.id();
  return t.record(OpKind::Transpose, {ia}, std::move(out),
                  [ia, m, n](Tape& tp, std::size_t self) {
                    if (!tp.needs_grad(ia)) return;
                    auto g = tp.grad_buffer(self);
                    auto ga = tp.grad_buffer(ia);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                  });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Bcast k = broadcast_kind(x, y, "add");
  Tensor out(out_shape(x, y, k));
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = x[k == Bcast::AScalar ? 0 : i] + y[k == Bcast::BScalar ? 0 : i];
  }
  std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::Add, {ia, ib}, std::move(out),
                  [ia, ib, k](Tape& tp, std::size_t self) {
                    auto g = tp.grad_buffer(self);
                    if (tp.needs_grad(ia)) {
                      auto ga = tp.grad_buffer(ia);
                      for (std::size_t i = 0; i < g.size(); ++i)
                        ga[k == Bcast::AScalar ? 0 : i] += g[i];
                    }
                    if (tp.needs_grad(ib)) {
                      auto gb = tp.grad_buffer(ib);
                      for (std::size_t i = 0; i < g.size(); ++i)
                        gb[k == Bcast::BScalar ? 0 : i] += g[i];
                    }
                  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Bcast k = broadcast_kind(x, y, "sub");
  Tensor out(out_shape(x, y, k));
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = x[k == Bcast::AScalar ? 0 : i] - y[k == Bcast::BScalar ? 0 : i];
  }
  std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::Sub, {ia, ib}, std::move(out),
                  [ia, ib, k](Tape& tp, std::size_t self) {
                    auto g = tp.grad_buffer(self);
                    if (tp.needs_grad(ia)) {
                      auto ga = tp.grad_buffer(ia);
                      for (std::size_t i = 0; i < g.size(); ++i)
                        ga[k == Bcast::AScalar ? 0 : i] += g[i];
                    }
                    if (tp.needs_grad(ib)) {
                      auto gb = tp.grad_buffer(ib);
                      for (std::size_t i = 0; i < g.size(); ++i)
                        gb[k == Bcast::BScalar ? 0 : i] -= g[i];
                    }
                  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Bcast k = broadcast_kind(x, y, "mul");
  Tensor out(out_shape(x, y, k));
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = x[k == Bcast::AScalar ? 0 : i] * y[k == Bcast::BScalar ? 0 : i];
  }
  std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::Mul, {ia, ib}, std::move(out),
                  [ia, ib, k](Tape& tp, std::size_t self) {
                    auto g = tp.grad_buffer(self);
                    const Tensor& xv = tp.value(ia);
                    const Tensor& yv = tp.value(ib);
                    const std::size_t n = g.size();
                    auto xi = [&](std::size_t i) { return xv[k == Bcast::AScalar ? 0 : i]; };
                    auto yi = [&](std::size_t i) { return yv[k == Bcast::BScalar ? 0 : i]; };
                    if (tp.needs_grad(ia)) {
                      auto ga = tp.grad_buffer(ia);
                      for (std::size_t i = 0; i < n; ++i)
                        ga[k == Bcast::AScalar ? 0 : i] += g[i] * yi(i);
                    }
                    if (tp.needs_grad(ib)) {
                      auto gb = tp.grad_buffer(ib);
                      for (std::size_t i = 0; i < n; ++i)
                        gb[k == Bcast::BScalar ? 0 : i] += g[i] * xi(i);
                    }
                  });
}

Var scale(Var a, double factor) {
  return unary(
      OpKind::Scale, a, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Var add_rowwise(Var x, Var bias) {
  Tape& t = same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "add_rowwise");
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  if (bv.numel() != n) {
    throw DimensionError("add_rowwise: bias " + shape_str(bv.shape()) +
                         " does not match columns of " + shape_str(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  std::size_t ix = x.id(), ib = bias.id();
  return t.record(OpKind::AddRowwise, {ix, ib}, std::move(out),
                  [ix, ib, m, n](Tape& tp, std::size_t self) {
                    auto g = tp.grad_buffer(self);
                    if (tp.needs_grad(ix)) {
                      auto gx = tp.grad_buffer(ix);
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    }
                    if (tp.needs_grad(ib)) {
                      auto gb = tp.grad_buffer(ib);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                    }
                  });
}

Var relu(Var a) {
  return unary(
      OpKind::Relu, a, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      OpKind::Gelu, a,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        return cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var a) {
  return unary(
      OpKind::Sigmoid, a, stable_sigmoid,
      [](double, double y) { return y * (1.0 - y); });
}

Var softmax_rows(Var x) {
  Tape& t = x.tape();
  const Tensor& v = x.value();
  require_matrix(v, "softmax_rows");
  const std::size_t m = v.dim(0), n = v.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = v.data().data() + i * n;
    double* orow = out.data().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < n; ++j) orow[j] *= inv;
  }
  std::size_t ix = x.id();
  return t.record(OpKind::SoftmaxRows, {ix}, std::move(out),
                  [ix, m, n](Tape& tp, std::size_t self) {
                    if (!tp.needs_grad(ix)) return;
                    auto g = tp.grad_buffer(self);
                    const Tensor& y = tp.value(self);
                    auto gx = tp.grad_buffer(ix);
                    for (std::size_t i = 0; i < m; ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                      for (std::size_t j = 0; j < n; ++j)
                        gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                    }
                  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& v = x.value();
  require_matrix(v, "layer_norm");
  const std::size_t m = v.dim(0), n = v.dim(1);
  if (gamma.value().numel() != n || beta.value().numel() != n) {
    throw DimensionError("layer_norm: affine parameters must have " +
                         std::to_string(n) + " elements");
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  // Normalized values and inverse std are needed again in backward.
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = v.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t.record(
      OpKind::LayerNorm, {ix, ig, ib}, std::move(out),
      [ix, ig, ib, m, n, xhat, inv_std](Tape& tp, std::size_t self) {
        auto g = tp.grad_buffer(self);
        const Tensor& gv = tp.value(ig);
        if (tp.needs_grad(ig)) {
          auto gg = tp.grad_buffer(ig);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * (*xhat)[i * n + j];
        }
        if (tp.needs_grad(ib)) {
          auto gb = tp.grad_buffer(ib);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
        if (tp.needs_grad(ix)) {
          auto gx = tp.grad_buffer(ix);
          const double invn = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[i * n + j] * gv[j];
              mean_d += d;
              mean_dh += d * (*xhat)[i * n + j];
            }
            mean_d *= invn;
            mean_dh *= invn;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[i * n + j] * gv[j];
              gx[i * n + j] +=
                  (*inv_std)[i] * (d - mean_d - (*xhat)[i * n + j] * mean_dh);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and losses

Var sum(Var a) {
  Tape& t = a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  std::size_t ia = a.id();
  return t.record(OpKind::Sum, {ia}, Tensor::scalar(s),
                  [ia](Tape& tp, std::size_t self) {
                    if (!tp.needs_grad(ia)) return;
                    const double g = tp.grad_buffer(self)[0];
                    for (double& x : tp.grad_buffer(ia)) x += g;
                  });
}

Var mean(Var a) {
  Tape& t = a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const double inv = 1.0 / static_cast<double>(a.value().numel());
  std::size_t ia = a.id();
  return t.record(OpKind::Mean, {ia}, Tensor::scalar(s * inv),
                  [ia, inv](Tape& tp, std::size_t self) {
                    if (!tp.needs_grad(ia)) return;
                    const double g = tp.grad_buffer(self)[0] * inv;
                    for (double& x : tp.grad_buffer(ia)) x += g;
                  });
}

Var abs_mean(Var a, Var b) {
  return pair_mean(
      OpKind::AbsMean, a, b, [](double d) { return std::abs(d); }, sign);
}

Var sq_mean(Var a, Var b) {
  return pair_mean(
      OpKind::SqMean, a, b, [](double d) { return d * d; },
      [](double d) { return 2.0 * d; });
}

Var smooth_l1_mean(Var a, Var b, double beta) {
  if (!(beta > 0)) throw ContractError("smooth_l1_mean: beta must be positive");
  return pair_mean(
      OpKind::SmoothL1Mean, a, b,
      [beta](double d) {
        const double ad = std::abs(d);
        return ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
      },
      [beta](double d) { return std::abs(d) < beta ? d / beta : sign(d); });
}

Var bce_with_logits(Var logits, Var targets) {
  Tape& t = same_tape(logits, targets);
  const Tensor& z = logits.value();
  const Tensor& y = targets.value();
  if (z.numel() != y.numel()) {
    throw DimensionError("bce_with_logits: logits " + shape_str(z.shape()) +
                         " vs targets " + shape_str(y.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < z.numel(); ++i) {
    acc += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  const double inv = 1.0 / static_cast<double>(z.numel());
  std::size_t iz = logits.id(), iy = targets.id();
  return t.record(OpKind::BceWithLogits, {iz, iy}, Tensor::scalar(acc * inv),
                  [iz, iy, inv](Tape& tp, std::size_t self) {
                    const double g = tp.grad_buffer(self)[0] * inv;
                    const Tensor& zv = tp.value(iz);
                    const Tensor& yv = tp.value(iy);
                    if (tp.needs_grad(iz)) {
                      auto gz = tp.grad_buffer(iz);
                      for (std::size_t i = 0; i < gz.size(); ++i)
                        gz[i] += g * (stable_sigmoid(zv[i]) - yv[i]);
                    }
                    if (tp.needs_grad(iy)) {
                      auto gy = tp.grad_buffer(iy);
                      for (std::size_t i = 0; i < gy.size(); ++i) gy[i] -= g * zv[i];
                    }
                  });
}

// ---------------------------------------------------------------------------
// Indexing

Var slice(Var a, std::size_t row0, std::size_t rows, std::size_t col0,
          std::size_t cols) {
  Tape& t = a.tape();
  const Tensor& x = a.value();
  require_matrix(x, "slice");
  const std::size_t n = x.dim(1);
  if (rows == 0 || cols == 0 || row0 + rows > x.dim(0) || col0 + cols > n) {
    throw DimensionError("slice out of range for " + shape_str(x.shape()));
  }
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = x[(row0 + i) * n + col0 + j];
  std::size_t ia = a.id();
  return t.record(OpKind::Slice, {ia}, std::move(out),
                  [ia, row0, rows, col0, cols, n](Tape& tp, std::size_t self) {
                    if (!tp.needs_grad(ia)) return;
                    auto g = tp.grad_buffer(self);
                    auto ga = tp.grad_buffer(ia);
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < cols; ++j)
                        ga[(row0 + i) * n + col0 + j] += g[i * cols + j];
                  });
}

Var concat_rows(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_matrix(x, "concat_rows");
  require_matrix(y, "concat_rows");
  if (x.dim(1) != y.dim(1)) {
    throw DimensionError("concat_rows: column mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(y.shape()));
  }
  std::vector<double> data(x.values());
  data.insert(data.end(), y.values().begin(), y.values().end());
  const std::size_t split = x.numel();
  std::size_t ia = a.id(), ib = b.id();
  return t.record(OpKind::ConcatRows, {ia, ib},
                  Tensor({x.dim(0) + y.dim(0), x.dim(1)}, std::move(data)),
                  [ia, ib, split](Tape& tp, std::size_t self) {
                    auto g = tp.grad_buffer(self);
                    if (tp.needs_grad(ia)) {
                      auto ga = tp.grad_buffer(ia);
                      for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
                    }
                    if (tp.needs_grad(ib)) {
                      auto gb = tp.grad_buffer(ib);
                      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
                    }
                  });
}

Var gather(Var a, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
  Tape& t = a.tape();
  const Tensor& x = a.value();
  require_matrix(x, "gather");
  const std::size_t n = x.dim(1);
  for (auto r : rows)
    if (r >= x.dim(0)) throw DimensionError("gather: row index out of range");
  for (auto c : cols)
    if (c >= n) throw DimensionError("gather: column index out of range");
  Tensor out({rows.size(), cols.size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out[i * cols.size() + j] = x[rows[i] * n + cols[j]];
  std::size_t ia = a.id();
  return t.record(OpKind::Gather, {ia}, std::move(out),
                  [ia, n, rows = std::move(rows), cols = std::move(cols)](
                      Tape& tp, std::size_t self) {
                    if (!tp.needs_grad(ia)) return;
                    auto g = tp.grad_buffer(self);
                    auto ga = tp.grad_buffer(ia);
                    for (std::size_t i = 0; i < rows.size(); ++i)
                      for (std::size_t j = 0; j < cols.size(); ++j)
                        ga[rows[i] * n + cols[j]] += g[i * cols.size() + j];
                  });
}

Var row_sums(Var a) {
  Tape& t = a.tape();
  const Tensor& x = a.value();
  require_matrix(x, "row_sums");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += x[i * n + j];
  std::size_t ia = a.id();
  return t.record(OpKind::RowSums, {ia}, std::move(out),
                  [ia, m, n](Tape& tp, std::size_t self) {
                    if (!tp.needs_grad(ia)) return;
                    auto g = tp.grad_buffer(self);
                    auto ga = tp.grad_buffer(ia);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
                  });
}

Var scale_rows_to(Var x, Var targets) {
  Tape& t = same_tape(x, targets);
  const Tensor& v = x.value();
  const Tensor& tv = targets.value();
  require_matrix(v, "scale_rows_to");
  const std::size_t m = v.dim(0), n = v.dim(1);
  if (tv.numel() != m) {
    throw DimensionError("scale_rows_to: need one target per row");
  }
  std::vector<double> sums(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) sums[i] += v[i * n + j];
  for (double s : sums) {
    if (s == 0.0) throw NumericalError("scale_rows_to: zero row sum");
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = v[i * n + j] * tv[i] / sums[i];
  std::size_t ix = x.id(), it = targets.id();
  return t.record(
      OpKind::ScaleRowsTo, {ix, it}, std::move(out),
      [ix, it, m, n, sums = std::move(sums)](Tape& tp, std::size_t self) {
        auto g = tp.grad_buffer(self);
        const Tensor& v = tp.value(ix);
        const Tensor& tv = tp.value(it);
        for (std::size_t i = 0; i < m; ++i) {
          double gx_dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) gx_dot += g[i * n + j] * v[i * n + j];
          gx_dot /= sums[i];
          if (tp.needs_grad(ix)) {
            auto gx = tp.grad_buffer(ix);
            const double r = tv[i] / sums[i];
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += r * (g[i * n + j] - gx_dot);
          }
          if (tp.needs_grad(it)) tp.grad_buffer(it)[i] += gx_dot;
        }
      });
}

Var reshape(Var a, Shape shape) {
  Tape& t = a.tape();
  Tensor out = a.value().reshaped(std::move(shape));
  std::size_t ia = a.id();
  return t.record(OpKind::Reshape, {ia}, std::move(out),
                  [ia](Tape& tp, std::size_t self) {
                    if (!tp.needs_grad(ia)) return;
                    auto g = tp.grad_buffer(self);
                    auto ga = tp.grad_buffer(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  });
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckReport finite_difference_check(const std::function<double()>& value,
                                        Tensor& x,
                                        std::span<const double> analytic,
                                        const GradCheckOptions& options) {
  if (analytic.size() != x.numel()) {
    throw DimensionError("grad_check: analytic gradient length mismatch");
  }
  std::vector<std::size_t> coords = options.coordinates;
  if (coords.empty()) {
    coords.resize(x.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  }
  const double h = options.step;
  const double f0 = options.kink_ratio ? value() : 0.0;
  GradCheckReport report;
  for (std::size_t idx : coords) {
    if (idx >= x.numel()) throw DimensionError("grad_check: coordinate out of range");
    const double orig = x[idx];
    x[idx] = orig + h;
    const double fp = value();
    x[idx] = orig - h;
    const double fm = value();
    x[idx] = orig;
    if (options.kink_ratio) {
      const double right = (fp - f0) / h;
      const double left = (f0 - fm) / h;
      const double scale_ =
          std::max({std::abs(right), std::abs(left), options.abs_floor});
      if (std::abs(right - left) > *options.kink_ratio * scale_) {
        ++report.skipped;
        continue;
      }
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[idx];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
    const double rel = std::abs(a - numeric) / denom;
    ++report.checked;
    if (report.checked == 1 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = idx;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

GradCheckReport grad_check_report(const ScalarFn& f, const Tensor& x,
                                  const GradCheckOptions& options) {
  std::vector<double> analytic;
  {
    Tape tape;
    Var xv = tape.variable(x);
    Var out = f(tape, xv);
    tape.backward(out);
    analytic = tape.grad(xv).values();
  }
  Tensor probe = x;
  auto eval = [&]() {
    Tape tape;
    Var xv = tape.constant(probe);
    return f(tape, xv).value().item();
  };
  return finite_difference_check(eval, probe, analytic, options);
}

double grad_check(const ScalarFn& f, const Tensor& x, double step) {
  GradCheckOptions options;
  options.step = step;
  return grad_check_report(f, x, options).max_rel_error;
}

}  // namespace acr
