#include <gtest/gtest.h>

#include <cmath>

#include "acr/error.hpp"
#include "acr/regularizer.hpp"
#include "acr/rng.hpp"
#include "acr/synth_data.hpp"
#include "acr/vit.hpp"

using namespace acr;

namespace {

Tensor random_square(Rng& rng, std::size_t n) {
  Tensor t({n, n});
  for (double& v : t.values()) v = rng.uniform();
  return t;
}

/// Scatter A' back into the source token order.
Tensor restore_order(const Tensor& a_prime, const std::vector<std::size_t>& sigma) {
  Tensor out(a_prime.shape());
  const auto src = [&](std::size_t j) { return j == 0 ? 0 : sigma[j - 1] + 1; };
  for (std::size_t i = 0; i < a_prime.dim(0); ++i)
    for (std::size_t j = 0; j < a_prime.dim(1); ++j) out.at(src(i), src(j)) = a_prime.at(i, j);
  return out;
}

double elementwise(double a, double b, Distance d) {
  const double diff = std::abs(a - b);
  switch (d) {
    case Distance::L1:
      return diff;
    case Distance::L2:
      return diff * diff;
    case Distance::SmoothL1:
      return diff < 0.01 ? 0.5 * diff * diff / 0.01 : diff - 0.005;
  }
  return 0.0;
}

struct OracleLosses {
  double act = 0.0;
  double aff = 0.0;
};

OracleLosses oracle(const std::vector<Tensor>& a, const std::vector<Tensor>& ap,
                    const SpatialTransform& t, const GridShape& g, Distance d) {
  const auto sigma = token_permutation(t, g).sigma;
  OracleLosses out;
  for (std::size_t l = 0; l < a.size(); ++l) {
    const Tensor b = restore_order(ap[l], sigma);
    const std::size_t n = g.n();
    double act = 0.0, aff = 0.0;
    for (std::size_t j = 1; j <= n; ++j) act += elementwise(a[l].at(0, j), b.at(0, j), d);
    for (std::size_t i = 1; i <= n; ++i)
      for (std::size_t j = 1; j <= n; ++j) aff += elementwise(a[l].at(i, j), b.at(i, j), d);
    out.act += act / static_cast<double>(n) / static_cast<double>(a.size());
    out.aff += aff / static_cast<double>(n * n) / static_cast<double>(a.size());
  }
  return out;
}

ViTConfig tiny_config() {
  ViTConfig c;
  c.patch_size = 2;
  c.grid = {3, 3};
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.num_classes = 3;
  return c;
}

Tensor random_image(Rng& rng) {
  Tensor img({3, 6, 6});
  for (double& v : img.values()) v = rng.uniform();
  return img;
}

std::vector<Tensor> attention_values(const ForwardResult& r) {
  std::vector<Tensor> out;
  for (const auto& rec : r.attentions) out.push_back(rec.value());
  return out;
}

}  // namespace

TEST(Distance, ParseAndName) {
  for (Distance d : {Distance::L1, Distance::L2, Distance::SmoothL1})
    EXPECT_EQ(parse_distance(distance_name(d)), d);
  EXPECT_THROW(parse_distance("cosine"), ContractError);
}

TEST(RegionActivation, HandExample) {
  const GridShape g{1, 2};
  const std::vector<Tensor> a{Tensor::matrix(3, 3, {0, 0.5, 0.5, 0, 0, 0, 0, 0, 0})};
  const std::vector<Tensor> ap{Tensor::matrix(3, 3, {0, 0.25, 0.75, 0, 0, 0, 0, 0, 0})};
  EXPECT_DOUBLE_EQ(region_activation_loss(a, ap, SpatialTransform::identity(), g), 0.25);
}

TEST(RegionLosses, MatchScalarLoopOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const GridShape g{1 + rng.index(4), 1 + rng.index(4)};
    const auto& ts = permutation_transforms();
    const SpatialTransform t = ts[rng.index(ts.size())];
    const std::size_t layers = 1 + rng.index(3);
    std::vector<Tensor> a, ap;
    for (std::size_t l = 0; l < layers; ++l) {
      a.push_back(random_square(rng, g.n() + 1));
      ap.push_back(random_square(rng, g.n() + 1));
    }
    for (Distance d : {Distance::L1, Distance::L2, Distance::SmoothL1}) {
      const auto o = oracle(a, ap, t, g, d);
      EXPECT_NEAR(region_activation_loss(a, ap, t, g, d), o.act, 1e-14) << t.name();
      EXPECT_NEAR(region_affinity_loss(a, ap, t, g, d), o.aff, 1e-14) << t.name();
    }
  }
}

TEST(RegionLosses, SymmetricUnderViewSwap) {
  Rng rng(22);
  for (int trial = 0; trial < 30; ++trial) {
    const GridShape g{1 + rng.index(5), 1 + rng.index(5)};
    for (const auto& t : permutation_transforms()) {
      const std::vector<Tensor> a{random_square(rng, g.n() + 1)};
      const std::vector<Tensor> ap{random_square(rng, g.n() + 1)};
      const SpatialTransform inv = inverse_transform(t, g);
      const GridShape gt = transformed_grid(t, g);
      EXPECT_NEAR(region_activation_loss(a, ap, t, g), region_activation_loss(ap, a, inv, gt),
                  1e-15);
      EXPECT_NEAR(region_affinity_loss(a, ap, t, g), region_affinity_loss(ap, a, inv, gt), 1e-15);
    }
  }
}

TEST(RegionLosses, MismatchesRejected) {
  const std::vector<Tensor> a{Tensor({10, 10})};
  const std::vector<Tensor> two{Tensor({10, 10}), Tensor({10, 10})};
  EXPECT_THROW(region_activation_loss(a, a, SpatialTransform::identity(), {2, 2}), DimensionError);
  EXPECT_THROW(region_affinity_loss(a, two, SpatialTransform::identity(), {3, 3}), DimensionError);
}

TEST(RegionLosses, VarMatchesValue) {
  Rng rng(23);
  const GridShape g{2, 3};
  const auto t = SpatialTransform::of(TransformKind::Rot270);
  const std::vector<Tensor> a{random_square(rng, 7)};
  const std::vector<Tensor> ap{random_square(rng, 7)};
  Tape tape;
  const std::vector<Var> va{tape.constant(a[0])};
  const std::vector<Var> vap{tape.constant(ap[0])};
  EXPECT_EQ(region_activation_loss(va, vap, t, g).value().item(),
            region_activation_loss(a, ap, t, g));
  EXPECT_EQ(region_affinity_loss(va, vap, t, g).value().item(), region_affinity_loss(a, ap, t, g));
}

TEST(RegionLosses, IdentityViewGivesExactZero) {
  const ViTConfig c = tiny_config();
  const Parameters p = init_parameters(c, 3);
  Rng rng(4);
  const Tensor image = random_image(rng);
  Tape t1, t2;
  const auto a = attention_values(forward(t1, image, p, c));
  const auto ap = attention_values(forward(t2, augment(image, SpatialTransform::identity(), 2), p, c));
  EXPECT_EQ(region_activation_loss(a, ap, SpatialTransform::identity(), c.grid), 0.0);
  EXPECT_EQ(region_affinity_loss(a, ap, SpatialTransform::identity(), c.grid), 0.0);
}

TEST(RegionLosses, DoubleFlipGivesExactZero) {
  const ViTConfig c = tiny_config();
  const Parameters p = init_parameters(c, 5);
  Rng rng(6);
  const Tensor image = random_image(rng);
  const auto flip = SpatialTransform::of(TransformKind::FlipH);
  Tape t1, t2;
  const auto a = attention_values(forward(t1, image, p, c));
  const auto ap = attention_values(forward(t2, augment(augment(image, flip, 2), flip, 2), p, c));
  EXPECT_EQ(region_activation_loss(a, ap, SpatialTransform::identity(), c.grid), 0.0);
  EXPECT_EQ(region_affinity_loss(a, ap, SpatialTransform::identity(), c.grid), 0.0);
}

TEST(Combine, HandArithmetic) {
  const LossBreakdown b = combine(1.0, 0.01, 0.002, {});
  EXPECT_NEAR(b.total, 2.2, 1e-12);
  EXPECT_EQ(combine(0.7, 5.0, 3.0, {.alpha = 0.0, .beta = 0.0}).total, 0.7);
}

TEST(Combine, DefaultWeights) {
  const LossWeights w;
  EXPECT_EQ(w.alpha, 100.0);
  EXPECT_EQ(w.beta, 100.0);
  EXPECT_EQ(w.distance, Distance::L1);
  EXPECT_THROW((LossWeights{.alpha = -1.0}).validate(), ContractError);
}

TEST(TotalLoss, BreakdownMatchesTerms) {
  Tape tape;
  const Var z1 = tape.constant(Tensor::matrix(1, 3, {0.3, -1.0, 2.0}));
  const Var z2 = tape.constant(Tensor::matrix(1, 3, {-0.2, 0.4, 1.1}));
  const Tensor y = Tensor::matrix(1, 3, {1, 0, 1});
  const Var act = tape.constant(Tensor::scalar(0.013));
  const Var aff = tape.constant(Tensor::scalar(0.0021));
  const LossWeights w{.alpha = 7.0, .beta = 3.0};
  const LossTerms terms = total_loss(z1, z2, y, act, aff, w);
  const double cls = 0.5 * (bce_with_logits(z1, tape.constant(y)).value().item() +
                            bce_with_logits(z2, tape.constant(y)).value().item());
  const LossBreakdown b = terms.breakdown();
  EXPECT_NEAR(b.l_cls, cls, 1e-15);
  EXPECT_EQ(b.l_act, 0.013);
  EXPECT_EQ(b.l_aff, 0.0021);
  EXPECT_NEAR(b.total, b.l_cls + 7.0 * b.l_act + 3.0 * b.l_aff, 1e-12);
}
