#pragma once

// Reverse-mode automatic differentiation over an explicit tape.
//
// A Tape owns every value computed during one step. Ops append nodes in
// topological order; backward() walks them once in reverse. Parameters live
// outside the tape and receive gradients through parameter() leaves.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "acr/tensor.hpp"

namespace acr {

class Tape;

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  Scale,
  AddRowwise,
  Relu,
  Gelu,
  Sigmoid,
  SoftmaxRows,
  LayerNorm,
  Mean,
  Sum,
  AbsMean,
  SqMean,
  SmoothL1Mean,
  BceWithLogits,
  Slice,
  ConcatRows,
  Gather,
  RowSums,
  ScaleRowsTo,
  Reshape,
};

std::string_view op_name(OpKind op);

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const;
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> grad;
    bool retain = false;
    bool requires_grad = false;  // leaf flag
    bool needs_grad = false;     // depends on a requires_grad leaf
    Tensor* sink = nullptr;      // external parameter accumulating the grad
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape after backward.
  Var variable(Tensor value);
  /// Leaf bound to an external tensor; backward adds into param.grad().
  Var parameter(Tensor& param);

  /// Appends an op node. Throws NumericalError if the value is not finite.
  Var record(OpKind op, std::vector<std::size_t> inputs, Tensor value,
             BackwardFn backward);

  /// Keep this node's gradient readable after backward.
  void retain(Var v);

  /// Populates gradients of every node reachable from `loss`.
  /// Throws ContractError for non-scalar loss and StateError when called
  /// twice without reset_grads().
  void backward(Var loss);

  /// Clears gradients so backward can run again on the same values.
  void reset_grads();

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient of a retained or requires_grad node after backward.
  Tensor grad(Var v) const;

  /// Mutable gradient accumulator for `id` (allocated on first use).
  std::span<double> grad_buffer(std::size_t id);

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Ops. All inputs must live on the same tape.

Var matmul(Var a, Var b);
Var transpose(Var a);
/// Identical shapes, or one operand scalar.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// x[m x n] + bias broadcast over rows; bias has n elements.
Var add_rowwise(Var x, Var bias);
Var relu(Var a);
/// Exact (erf) GELU.
Var gelu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var x);
/// Row-wise normalization with affine gamma/beta of length cols.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var mean(Var a);
Var sum(Var a);
/// mean(|a - b|)
Var abs_mean(Var a, Var b);
/// mean((a - b)^2)
Var sq_mean(Var a, Var b);
/// mean of Huber-style smooth L1 with transition at `beta`.
Var smooth_l1_mean(Var a, Var b, double beta = 1.0);
/// Mean binary cross-entropy over elements; targets in [0, 1].
Var bce_with_logits(Var logits, Var targets);
Var slice(Var a, std::size_t row0, std::size_t rows, std::size_t col0,
          std::size_t cols);
Var concat_rows(Var a, Var b);
/// out(i, j) = a(rows[i], cols[j]).
Var gather(Var a, std::vector<std::size_t> rows, std::vector<std::size_t> cols);
/// [m x n] -> [m x 1]
Var row_sums(Var a);
/// Scales each row of x so it sums to targets[i]; targets is [m x 1].
Var scale_rows_to(Var x, Var targets);
Var reshape(Var a, Shape shape);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double abs_floor = 1e-6;
  /// When set, coordinates whose one-sided differences disagree by more than
  /// this fraction of the larger slope are treated as kinks and skipped.
  std::optional<double> kink_ratio;
  /// Subset of flat coordinates to probe; empty means all.
  std::vector<std::size_t> coordinates;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// Compares `analytic` (d value / d x) with central differences of `value`
/// while perturbing `x` in place. `x` is restored on return.
GradCheckReport finite_difference_check(const std::function<double()>& value,
                                        Tensor& x,
                                        std::span<const double> analytic,
                                        const GradCheckOptions& options = {});

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Checks the tape gradient of a scalar function at x against central
/// differences; returns the full report.
GradCheckReport grad_check_report(const ScalarFn& f, const Tensor& x,
                                  const GradCheckOptions& options = {});

/// Max relative error between analytic and central-difference gradients.
double grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-5);

}  // namespace acr
