#include "acr/regularizer.hpp"

#include "acr/error.hpp"

namespace acr {

Distance parse_distance(std::string_view text) {
  if (text == "l1" || text == "L1") return Distance::L1;
  if (text == "l2" || text == "L2") return Distance::L2;
  if (text == "smooth_l1" || text == "SmoothL1" || text == "smoothl1") {
    return Distance::SmoothL1;
  }
  throw ContractError("unknown distance '" + std::string(text) + "'");
}

std::string distance_name(Distance d) {
  switch (d) {
    case Distance::L1: return "l1";
    case Distance::L2: return "l2";
    case Distance::SmoothL1: return "smooth_l1";
  }
  return "unknown";
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    throw ContractError("loss weights must be non-negative");
  }
}

Var distance(Var a, Var b, Distance metric) {
  switch (metric) {
    case Distance::L1: return abs_mean(a, b);
    case Distance::L2: return sq_mean(a, b);
    // Knee at 0.01.
    case Distance::SmoothL1: return smooth_l1_mean(a, b, 0.01);
  }
  throw ContractError("unknown distance");
}

namespace {

enum class Region { ClassToPatch, PatchToPatch };

Var consistency(std::span<const Var> a_layers, std::span<const Var> a_prime_layers,
                const SpatialTransform& t, const GridShape& g, Distance metric,
                Region region) {
  if (a_layers.empty()) throw ContractError("consistency loss needs at least one layer");
  if (a_layers.size() != a_prime_layers.size()) {
    throw DimensionError("layer count mismatch between views: " +
                         std::to_string(a_layers.size()) + " vs " +
                         std::to_string(a_prime_layers.size()));
  }
  const std::size_t n = g.n();
  Var acc;
  for (std::size_t i = 0; i < a_layers.size(); ++i) {
    const Tensor& a = a_layers[i].value();
    if (a.rank() != 2 || a.dim(0) != n + 1 || a.dim(1) != n + 1) {
      throw DimensionError("attention " + shape_str(a.shape()) +
                           " does not match grid " + g.str());
    }
    Var restored = invert_attention(a_prime_layers[i], t, g);
    Var d = region == Region::ClassToPatch
                ? distance(slice(a_layers[i], 0, 1, 1, n), slice(restored, 0, 1, 1, n),
                           metric)
                : distance(slice(a_layers[i], 1, n, 1, n), slice(restored, 1, n, 1, n),
                           metric);
    acc = i == 0 ? d : add(acc, d);
  }
  if (a_layers.size() == 1) return acc;
  return scale(acc, 1.0 / static_cast<double>(a_layers.size()));
}

double consistency_value(std::span<const Tensor> a_layers,
                         std::span<const Tensor> a_prime_layers,
                         const SpatialTransform& t, const GridShape& g,
                         Distance metric, Region region) {
  Tape tape;
  std::vector<Var> a, ap;
  for (const auto& m : a_layers) a.push_back(tape.constant(m));
  for (const auto& m : a_prime_layers) ap.push_back(tape.constant(m));
  return consistency(a, ap, t, g, metric, region).value().item();
}

}  // namespace

Var region_activation_loss(std::span<const Var> a_layers,
                           std::span<const Var> a_prime_layers,
                           const SpatialTransform& t, const GridShape& g,
                           Distance metric) {
  return consistency(a_layers, a_prime_layers, t, g, metric, Region::ClassToPatch);
}

Var region_affinity_loss(std::span<const Var> a_layers,
                         std::span<const Var> a_prime_layers,
                         const SpatialTransform& t, const GridShape& g,
                         Distance metric) {
  return consistency(a_layers, a_prime_layers, t, g, metric, Region::PatchToPatch);
}

double region_activation_loss(std::span<const Tensor> a_layers,
                              std::span<const Tensor> a_prime_layers,
                              const SpatialTransform& t, const GridShape& g,
                              Distance metric) {
  return consistency_value(a_layers, a_prime_layers, t, g, metric, Region::ClassToPatch);
}

double region_affinity_loss(std::span<const Tensor> a_layers,
                            std::span<const Tensor> a_prime_layers,
                            const SpatialTransform& t, const GridShape& g,
                            Distance metric) {
  return consistency_value(a_layers, a_prime_layers, t, g, metric, Region::PatchToPatch);
}

LossBreakdown LossTerms::breakdown() const {
  return {l_cls.value().item(), l_act.value().item(), l_aff.value().item(),
          total.value().item()};
}

LossTerms total_loss(Var logits, Var logits_prime, const Tensor& targets, Var l_act,
                     Var l_aff, const LossWeights& weights) {
  weights.validate();
  for (double v : targets.data()) {
    if (v != 0.0 && v != 1.0) throw ContractError("targets must be multi-hot");
  }
  Tape& tape = logits.tape();
  Var y = tape.constant(targets.reshaped(logits.value().shape()));
  Var cls = scale(add(bce_with_logits(logits, y), bce_with_logits(logits_prime, y)), 0.5);
  Var total = add(add(cls, scale(l_act, weights.alpha)), scale(l_aff, weights.beta));
  return {cls, l_act, l_aff, total};
}

LossBreakdown combine(double l_cls, double l_act, double l_aff,
                      const LossWeights& weights) {
  weights.validate();
  return {l_cls, l_act, l_aff, l_cls + l_act * weights.alpha + l_aff * weights.beta};
}

}  // namespace acr
