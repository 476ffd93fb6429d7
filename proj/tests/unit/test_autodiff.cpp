#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "acr/autodiff.hpp"
#include "acr/error.hpp"
#include "acr/gradcheck.hpp"
#include "acr/rng.hpp"

using namespace acr;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Weighted sum with fixed weights, to probe the full Jacobian.
ScalarFn probe(std::function<Var(Tape&, Var)> op, Tensor w) {
  return [op = std::move(op), w = std::move(w)](Tape& t, Var x) {
    Var y = op(t, x);
    return sum(mul(y, t.constant(w.reshaped(y.shape()))));
  };
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward values

TEST(AutodiffForward, IdentityTimesMatrix) {
  Tape t;
  const Tensor m = Tensor::matrix(2, 2, {0.3, -1.2, 4.0, 2.5});
  EXPECT_EQ(matmul(t.constant(Tensor::identity(2)), t.constant(m)).value(), m);
}

TEST(AutodiffForward, HandMatmul) {
  Tape t;
  const Var y = matmul(t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4})),
                       t.constant(Tensor::matrix(2, 1, {1, 1})));
  EXPECT_EQ(y.value(), Tensor::matrix(2, 1, {3, 7}));
}

TEST(AutodiffForward, MatmulShapeMismatch) {
  Tape t;
  EXPECT_THROW(matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3}))), DimensionError);
}

TEST(AutodiffForward, MatmulMatchesTripleLoop) {
  Rng rng(3);
  const Tensor a = random_tensor(rng, {4, 5}), b = random_tensor(rng, {5, 3});
  Tape t;
  const Tensor y = matmul(t.constant(a), t.constant(b)).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(y.at(i, j), s, 1e-14);
    }
}

TEST(AutodiffForward, SoftmaxUniformRows) {
  Tape t;
  const Tensor y =
      softmax_rows(t.constant(Tensor::matrix(2, 3, {0, 0, 0, 7.5, 7.5, 7.5}))).value();
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(AutodiffForward, SoftmaxRowsAreStochastic) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    const Tensor y = softmax_rows(t.constant(random_tensor(rng, {4, 7}, -30.0, 30.0))).value();
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(y.at(i, j), 0.0);
        EXPECT_LE(y.at(i, j), 1.0);
        s += y.at(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(AutodiffForward, SoftmaxLargeInputsStable) {
  Tape t;
  const Tensor y = softmax_rows(t.constant(Tensor::matrix(1, 2, {1000.0, 1000.0}))).value();
  EXPECT_NEAR(y[0], 0.5, 1e-15);
}

TEST(AutodiffForward, AbsMeanHandValues) {
  Tape t;
  EXPECT_EQ(abs_mean(t.constant(Tensor::matrix(1, 2, {1, 2})),
                     t.constant(Tensor::matrix(1, 2, {1, 2})))
                .value()
                .item(),
            0.0);
  EXPECT_DOUBLE_EQ(abs_mean(t.constant(Tensor::matrix(1, 2, {0.5, 0.5})),
                            t.constant(Tensor::matrix(1, 2, {0.25, 0.75})))
                       .value()
                       .item(),
                   0.25);
}

TEST(AutodiffForward, ElementwiseScalarOracles) {
  Rng rng(11);
  const Tensor a = random_tensor(rng, {3, 4}, -3, 3), b = random_tensor(rng, {3, 4}, -3, 3);
  Tape t;
  const Var va = t.constant(a), vb = t.constant(b);
  const Tensor s = add(va, vb).value(), d = sub(va, vb).value(), m = mul(va, vb).value();
  const Tensor r = relu(va).value(), g = gelu(va).value(), sg = sigmoid(va).value();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_DOUBLE_EQ(s[i], a[i] + b[i]);
    EXPECT_DOUBLE_EQ(d[i], a[i] - b[i]);
    EXPECT_DOUBLE_EQ(m[i], a[i] * b[i]);
    EXPECT_EQ(r[i], a[i] > 0 ? a[i] : 0.0);
    EXPECT_NEAR(g[i], 0.5 * a[i] * (1.0 + std::erf(a[i] / std::sqrt(2.0))), 1e-15);
    EXPECT_NEAR(sg[i], 1.0 / (1.0 + std::exp(-a[i])), 1e-15);
  }
  EXPECT_NEAR(mean(va).value().item(),
              [&] {
                double x = 0;
                for (double v : a.values()) x += v;
                return x / 12.0;
              }(),
              1e-15);
}

TEST(AutodiffForward, ScalarBroadcastOnly) {
  Tape t;
  const Var a = t.constant(Tensor({2, 3}, 2.0));
  EXPECT_EQ(mul(a, t.constant(Tensor::scalar(3.0))).value(), Tensor({2, 3}, 6.0));
  EXPECT_THROW(add(a, t.constant(Tensor({1, 3}))), DimensionError);
  EXPECT_THROW(mul(a, t.constant(Tensor({3, 2}))), DimensionError);
}

TEST(AutodiffForward, LayerNormOracle) {
  Rng rng(2);
  const Tensor x = random_tensor(rng, {3, 5}, -2, 2), g = random_tensor(rng, {1, 5}),
               b = random_tensor(rng, {1, 5});
  Tape t;
  const Tensor y = layer_norm(t.constant(x), t.constant(g), t.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 5; ++j) mu += x.at(i, j) / 5.0;
    for (std::size_t j = 0; j < 5; ++j) var += (x.at(i, j) - mu) * (x.at(i, j) - mu) / 5.0;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(y.at(i, j), (x.at(i, j) - mu) / std::sqrt(var + 1e-5) * g[j] + b[j], 1e-13);
    }
  }
}

TEST(AutodiffForward, BceWithLogitsOracle) {
  Tape t;
  const Tensor z = Tensor::matrix(1, 3, {-2.0, 0.5, 40.0});
  const Tensor y = Tensor::matrix(1, 3, {1.0, 0.0, 1.0});
  double expect = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z[i]));
    expect += -(y[i] == 1.0 ? std::log(p) : std::log1p(-p)) / 3.0;
  }
  EXPECT_NEAR(bce_with_logits(t.constant(z), t.constant(y)).value().item(), expect, 1e-12);
}

TEST(AutodiffForward, SmoothL1Regions) {
  Tape t;
  const Var a = t.constant(Tensor::matrix(1, 2, {0.0, 0.0}));
  const Var b = t.constant(Tensor::matrix(1, 2, {0.5, 3.0}));
  // beta = 1: 0.5 * 0.25 / 1 and 3 - 0.5.
  EXPECT_DOUBLE_EQ(smooth_l1_mean(a, b, 1.0).value().item(), (0.125 + 2.5) / 2.0);
}

TEST(AutodiffForward, SliceConcatGatherRowSums) {
  Tape t;
  const Tensor a = Tensor::matrix(3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Var v = t.constant(a);
  EXPECT_EQ(slice(v, 1, 2, 0, 2).value(), Tensor::matrix(2, 2, {4, 5, 7, 8}));
  EXPECT_EQ(concat_rows(slice(v, 0, 1, 0, 3), slice(v, 2, 1, 0, 3)).value(),
            Tensor::matrix(2, 3, {1, 2, 3, 7, 8, 9}));
  EXPECT_EQ(gather(v, {2, 0}, {1, 1, 0}).value(), Tensor::matrix(2, 3, {8, 8, 7, 2, 2, 1}));
  EXPECT_EQ(row_sums(v).value(), Tensor::matrix(3, 1, {6, 15, 24}));
  EXPECT_THROW(slice(v, 2, 2, 0, 1), DimensionError);
  EXPECT_THROW(gather(v, {3}, {0}), DimensionError);
}

TEST(AutodiffForward, ScaleRowsTo) {
  Tape t;
  const Var x = t.constant(Tensor::matrix(2, 2, {1, 3, 2, 2}));
  const Tensor y = scale_rows_to(x, t.constant(Tensor::matrix(2, 1, {2, 0.5}))).value();
  EXPECT_DOUBLE_EQ(y.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(0, 1), 1.5);
  EXPECT_DOUBLE_EQ(y.at(1, 0), 0.25);
  EXPECT_THROW(scale_rows_to(t.constant(Tensor({1, 2}, 0.0)), t.constant(Tensor({1, 1}, 1.0))),
               NumericalError);
}

// ---------------------------------------------------------------------------
// Tape semantics

TEST(Tape, NonScalarLossRejected) {
  Tape t;
  const Var x = t.variable(Tensor({2, 2}, 1.0));
  EXPECT_THROW(t.backward(scale(x, 2.0)), ContractError);
}

TEST(Tape, SecondBackwardRequiresReset) {
  Tape t;
  const Var x = t.variable(Tensor::scalar(3.0));
  const Var y = mul(x, x);
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x).item(), 6.0);
  EXPECT_THROW(t.backward(y), StateError);
  t.reset_grads();
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x).item(), 6.0);
}

TEST(Tape, GradBeforeBackwardIsStateError) {
  Tape t;
  const Var x = t.variable(Tensor::scalar(1.0));
  EXPECT_THROW(t.grad(x), StateError);
}

TEST(Tape, UnretainedIntermediateHasNoGrad) {
  Tape t;
  const Var x = t.variable(Tensor::scalar(2.0));
  const Var h = mul(x, x);
  const Var kept = scale(h, 3.0);
  t.retain(kept);
  t.backward(sum(kept));
  EXPECT_DOUBLE_EQ(t.grad(kept).item(), 1.0);
  EXPECT_THROW(t.grad(h), StateError);
}

TEST(Tape, TopologicalOrder) {
  Tape t;
  const Var x = t.variable(Tensor({2, 2}, 0.5));
  const Var y = softmax_rows(matmul(x, transpose(x)));
  (void)y;
  for (std::size_t id = 0; id < t.size(); ++id)
    for (std::size_t in : t.node(id).inputs) EXPECT_LT(in, id);
}

TEST(Tape, NanIsNumericalError) {
  Tape t;
  const Var x = t.variable(Tensor::scalar(std::numeric_limits<double>::infinity()));
  EXPECT_THROW(scale(x, 0.0), NumericalError);
  const Var y = t.variable(Tensor::scalar(std::nan("")));
  EXPECT_THROW(mul(y, y), NumericalError);
}

TEST(Tape, ParameterGradientsAccumulate) {
  Tensor w = Tensor::matrix(1, 2, {1.0, -2.0});
  for (int pass = 0; pass < 2; ++pass) {
    Tape t;
    t.backward(sum(mul(t.parameter(w), t.constant(Tensor::matrix(1, 2, {3, 4})))));
  }
  EXPECT_EQ(w.grad()[0], 6.0);
  EXPECT_EQ(w.grad()[1], 8.0);
}

TEST(Tape, AccumulationEqualsSumOfSeparateBackwards) {
  Rng rng(17);
  const Tensor x0 = random_tensor(rng, {3, 3});
  const Tensor w = random_tensor(rng, {3, 3});
  const auto l1 = [&](Tape& t, Var x) { return sum(softmax_rows(matmul(x, t.constant(w)))); };
  const auto l2 = [&](Tape& t, Var x) { return sq_mean(gelu(x), t.constant(w)); };
  Tensor joint, g1, g2;
  {
    Tape t;
    const Var x = t.variable(x0);
    t.backward(add(l1(t, x), l2(t, x)));
    joint = t.grad(x);
  }
  {
    Tape t;
    const Var x = t.variable(x0);
    t.backward(l1(t, x));
    g1 = t.grad(x);
  }
  {
    Tape t;
    const Var x = t.variable(x0);
    t.backward(l2(t, x));
    g2 = t.grad(x);
  }
  for (std::size_t i = 0; i < joint.numel(); ++i) EXPECT_NEAR(joint[i], g1[i] + g2[i], 1e-15);
}

TEST(Tape, BackwardIsDeterministic) {
  Rng rng(23);
  const Tensor x0 = random_tensor(rng, {4, 4});
  Tensor first;
  for (int run = 0; run < 2; ++run) {
    Tape t;
    const Var x = t.variable(x0);
    t.backward(mean(gelu(matmul(softmax_rows(x), x))));
    if (run == 0) first = t.grad(x);
    else EXPECT_EQ(t.grad(x), first);
  }
}

// ---------------------------------------------------------------------------
// Gradients against central differences

TEST(GradCheck, QuadraticExact) {
  GradCheckOptions o;
  const auto r = grad_check_report([](Tape&, Var x) { return mul(x, x); }, Tensor::scalar(3.0), o);
  EXPECT_NEAR(r.worst_analytic, 6.0, 1e-12);
  EXPECT_NEAR(r.worst_numeric, 6.0, 1e-7);
}

TEST(GradCheck, ReluInactiveRegion) {
  const auto r =
      grad_check_report([](Tape&, Var x) { return sum(relu(x)); }, Tensor::scalar(-1.0));
  EXPECT_EQ(r.worst_analytic, 0.0);
  EXPECT_EQ(r.worst_numeric, 0.0);
}

TEST(GradCheck, MatmulRandom) {
  Rng rng(31);
  const Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2});
  const Tensor w = random_tensor(rng, {3, 2});
  EXPECT_LT(grad_check(probe([b](Tape& t, Var x) { return matmul(x, t.constant(b)); }, w), a),
            1e-6);
  EXPECT_LT(grad_check(probe([a](Tape& t, Var x) { return matmul(t.constant(a), x); }, w), b),
            1e-6);
}

TEST(GradCheck, SoftmaxRandom) {
  Rng rng(37);
  EXPECT_LT(grad_check(probe([](Tape&, Var x) { return softmax_rows(x); },
                             random_tensor(rng, {2, 5})),
                       random_tensor(rng, {2, 5}, -2, 2)),
            1e-6);
}

TEST(GradCheck, BceWithLogits) {
  Rng rng(41);
  const Tensor y = Tensor::matrix(1, 4, {1, 0, 0, 1});
  EXPECT_LT(grad_check([y](Tape& t, Var x) { return bce_with_logits(x, t.constant(y)); },
                       random_tensor(rng, {1, 4}, -4, 4)),
            1e-5);
}

TEST(GradCheck, KinkCoordinatesAreSkipped) {
  GradCheckOptions o;
  o.kink_ratio = 0.5;
  const auto r = grad_check_report([](Tape& t, Var x) {
    return abs_mean(x, t.constant(Tensor::matrix(1, 2, {0.0, 5.0})));
  }, Tensor::matrix(1, 2, {0.0, 1.0}), o);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.checked, 1u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

/// Every differentiable op at many random points, away from kinks.
class OpGradientProperty : public ::testing::TestWithParam<int> {};

TEST_P(OpGradientProperty, AllOpsWithinTolerance) {
  GradCheckSuiteOptions o;
  o.seed = static_cast<std::uint64_t>(GetParam());
  for (const auto& e : check_op_gradients(o)) {
    EXPECT_TRUE(e.passed) << e.name << " rel err " << e.report.max_rel_error;
  }
}

INSTANTIATE_TEST_SUITE_P(RandomPoints, OpGradientProperty, ::testing::Range(0, 100));
