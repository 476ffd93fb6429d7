#pragma once

// Attention consistency between two views of an image.
//
//   L_act = mean_i  dist(A_i[0, 1:],  f^-1(A'_i)[0, 1:])
//   L_aff = mean_i  dist(A_i[1:, 1:], f^-1(A'_i)[1:, 1:])
//   L     = L_cls + alpha * L_act + beta * L_aff
//
// dist is an elementwise mean (L1 by default), i ranges over the selected
// layers, and f^-1 restores the token order of the augmented view.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acr/autodiff.hpp"
#include "acr/grid_transform.hpp"

namespace acr {

enum class Distance { L1, L2, SmoothL1 };

Distance parse_distance(std::string_view text);  // "l1", "l2", "smooth_l1"
std::string distance_name(Distance d);

struct LossWeights {
  double alpha = 100.0;
  double beta = 100.0;
  Distance distance = Distance::L1;

  void validate() const;
};

struct LossBreakdown {
  double l_cls = 0.0;
  double l_act = 0.0;
  double l_aff = 0.0;
  double total = 0.0;
};

/// Elementwise-mean distance between equally shaped tensors.
Var distance(Var a, Var b, Distance metric);

Var region_activation_loss(std::span<const Var> a_layers,
                           std::span<const Var> a_prime_layers,
                           const SpatialTransform& t, const GridShape& g,
                           Distance metric = Distance::L1);

Var region_affinity_loss(std::span<const Var> a_layers,
                         std::span<const Var> a_prime_layers,
                         const SpatialTransform& t, const GridShape& g,
                         Distance metric = Distance::L1);

// Value-only overloads (no gradient), convenient for inspection and tests.
double region_activation_loss(std::span<const Tensor> a_layers,
                              std::span<const Tensor> a_prime_layers,
                              const SpatialTransform& t, const GridShape& g,
                              Distance metric = Distance::L1);
double region_affinity_loss(std::span<const Tensor> a_layers,
                            std::span<const Tensor> a_prime_layers,
                            const SpatialTransform& t, const GridShape& g,
                            Distance metric = Distance::L1);

struct LossTerms {
  Var l_cls;
  Var l_act;
  Var l_aff;
  Var total;

  LossBreakdown breakdown() const;
};

/// L_cls is the mean of the two views' BCE-with-logits against `targets`.
LossTerms total_loss(Var logits, Var logits_prime, const Tensor& targets, Var l_act,
                     Var l_aff, const LossWeights& weights);

/// Scalar form of the objective.
LossBreakdown combine(double l_cls, double l_act, double l_aff,
                      const LossWeights& weights);

}  // namespace acr
