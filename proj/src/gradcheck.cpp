#include "acr/gradcheck.hpp"

#include <algorithm>
#include <functional>

#include "acr/error.hpp"
#include "acr/grid_transform.hpp"
#include "acr/regularizer.hpp"
#include "acr/rng.hpp"
#include "acr/synth_data.hpp"

namespace acr {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Magnitudes in [0.1, 1), random sign.
Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    const double m = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

Tensor row_stochastic(Rng& rng, std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (t.at(i, j) = rng.uniform(0.05, 1.0));
    for (std::size_t j = 0; j < n; ++j) t.at(i, j) /= s;
  }
  return t;
}

/// sum(op(x) * w) for fixed random weights w.
ScalarFn contracted(std::function<Var(Tape&, Var)> op, Shape out_shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(rng, std::move(out_shape));
  return [op = std::move(op), w](Tape& tape, Var x) {
    Var y = op(tape, x);
    if (y.value().numel() != w.numel()) throw DimensionError("contracted: output " + shape_str(y.shape()) + " vs weights " + shape_str(w.shape()));
    Var wv = tape.constant(w.reshaped(y.shape()));
    return sum(mul(y, wv));
  };
}

struct OpCase {
  std::string name;
  ScalarFn fn;
  Tensor x;
};

}  // namespace

std::vector<GradCheckEntry> check_op_gradients(const GradCheckSuiteOptions& options) {
  Rng rng(Rng::derive(options.seed, 100));
  std::vector<OpCase> cases;
  std::uint64_t k = 0;
  const auto add_case = [&](std::string name, std::function<Var(Tape&, Var)> op, Tensor x,
                       Shape out) {
    cases.push_back({std::move(name), contracted(std::move(op), std::move(out),
                                                 Rng::derive(options.seed, 200 + k++)),
                     std::move(x)});
  };

  const Tensor a34 = random_tensor(rng, {3, 4});
  const Tensor b34 = random_tensor(rng, {3, 4});
  const Tensor b45 = random_tensor(rng, {4, 5});
  const Tensor bias4 = random_tensor(rng, {1, 4});
  const Tensor gamma4 = random_tensor(rng, {1, 4}, 0.5, 1.5);
  const Tensor beta4 = random_tensor(rng, {1, 4});

  add_case("matmul.lhs", [b45](Tape& t, Var x) { return matmul(x, t.constant(b45)); }, a34, {3, 5});
  add_case("matmul.rhs", [a34](Tape& t, Var x) { return matmul(t.constant(a34), x); }, b45, {3, 5});
  add_case("transpose", [](Tape&, Var x) { return transpose(x); }, a34, {4, 3});
  add_case("add.lhs", [b34](Tape& t, Var x) { return add(x, t.constant(b34)); }, a34, {3, 4});
  add_case("add.rhs", [a34](Tape& t, Var x) { return add(t.constant(a34), x); }, b34, {3, 4});
  add_case("sub.lhs", [b34](Tape& t, Var x) { return sub(x, t.constant(b34)); }, a34, {3, 4});
  add_case("sub.rhs", [a34](Tape& t, Var x) { return sub(t.constant(a34), x); }, b34, {3, 4});
  add_case("mul.lhs", [b34](Tape& t, Var x) { return mul(x, t.constant(b34)); }, a34, {3, 4});
  add_case("mul.rhs", [a34](Tape& t, Var x) { return mul(t.constant(a34), x); }, b34, {3, 4});
  add_case("mul.scalar", [a34](Tape& t, Var x) { return mul(t.constant(a34), x); },
      Tensor::scalar(0.7), {3, 4});
  add_case("scale", [](Tape&, Var x) { return scale(x, -1.7); }, a34, {3, 4});
  add_case("add_rowwise.x", [bias4](Tape& t, Var x) { return add_rowwise(x, t.constant(bias4)); },
      a34, {3, 4});
  add_case("add_rowwise.bias", [a34](Tape& t, Var x) { return add_rowwise(t.constant(a34), x); },
      bias4, {3, 4});
  add_case("relu", [](Tape&, Var x) { return relu(x); }, away_from_zero(rng, {3, 4}), {3, 4});
  add_case("gelu", [](Tape&, Var x) { return gelu(x); }, random_tensor(rng, {3, 4}, -3.0, 3.0),
      {3, 4});
  add_case("sigmoid", [](Tape&, Var x) { return sigmoid(x); }, random_tensor(rng, {3, 4}, -3.0, 3.0),
      {3, 4});
  add_case("softmax_rows", [](Tape&, Var x) { return softmax_rows(x); },
      random_tensor(rng, {3, 4}, -2.0, 2.0), {3, 4});
  add_case("layer_norm.x",
      [gamma4, beta4](Tape& t, Var x) {
        return layer_norm(x, t.constant(gamma4), t.constant(beta4));
      },
      a34, {3, 4});
  add_case("layer_norm.gamma",
      [a34, beta4](Tape& t, Var x) { return layer_norm(t.constant(a34), x, t.constant(beta4)); },
      gamma4, {3, 4});
  add_case("layer_norm.beta",
      [a34, gamma4](Tape& t, Var x) {
        return layer_norm(t.constant(a34), t.constant(gamma4), x);
      },
      beta4, {3, 4});
  add_case("mean", [](Tape&, Var x) { return mean(x); }, a34, {1});
  add_case("sum", [](Tape&, Var x) { return sum(x); }, a34, {1});
  {
    // |a - b| >= 0.05 everywhere.
    Tensor shifted = b34;
    const Tensor off = away_from_zero(rng, {3, 4});
    for (std::size_t i = 0; i < shifted.numel(); ++i) shifted[i] = a34[i] + 0.5 * off[i];
    add_case("abs_mean.lhs", [shifted](Tape& t, Var x) { return abs_mean(x, t.constant(shifted)); },
        a34, {1});
    add_case("abs_mean.rhs", [a34](Tape& t, Var x) { return abs_mean(t.constant(a34), x); }, shifted,
        {1});
    add_case("smooth_l1_mean.lhs",
        [shifted](Tape& t, Var x) { return smooth_l1_mean(x, t.constant(shifted), 0.3); }, a34,
        {1});
    add_case("smooth_l1_mean.rhs",
        [a34](Tape& t, Var x) { return smooth_l1_mean(t.constant(a34), x, 0.3); }, shifted, {1});
  }
  add_case("sq_mean.lhs", [b34](Tape& t, Var x) { return sq_mean(x, t.constant(b34)); }, a34, {1});
  add_case("sq_mean.rhs", [a34](Tape& t, Var x) { return sq_mean(t.constant(a34), x); }, b34, {1});
  {
    const Tensor targets({1, 4}, {1.0, 0.0, 1.0, 0.0});
    add_case("bce_with_logits",
        [targets](Tape& t, Var x) { return bce_with_logits(x, t.constant(targets)); },
        random_tensor(rng, {1, 4}, -3.0, 3.0), {1});
  }
  add_case("slice", [](Tape&, Var x) { return slice(x, 1, 2, 1, 3); }, a34, {2, 3});
  add_case("concat_rows.top", [b34](Tape& t, Var x) { return concat_rows(x, t.constant(b34)); }, a34,
      {6, 4});
  add_case("concat_rows.bottom", [a34](Tape& t, Var x) { return concat_rows(t.constant(a34), x); },
      b34, {6, 4});
  add_case("gather", [](Tape&, Var x) { return gather(x, {2, 0, 1, 0}, {3, 1, 0}); }, a34, {4, 3});
  add_case("row_sums", [](Tape&, Var x) { return row_sums(x); }, a34, {3, 1});
  {
    const Tensor pos = random_tensor(rng, {3, 4}, 0.1, 1.0);
    const Tensor targets = random_tensor(rng, {3, 1}, 0.5, 1.5);
    add_case("scale_rows_to.x",
        [targets](Tape& t, Var x) { return scale_rows_to(x, t.constant(targets)); }, pos, {3, 4});
    add_case("scale_rows_to.targets",
        [pos](Tape& t, Var x) { return scale_rows_to(t.constant(pos), x); }, targets, {3, 4});
  }
  add_case("reshape", [](Tape&, Var x) { return reshape(x, {4, 3}); }, a34, {4, 3});
  {
    const GridShape g{2, 3};
    for (const auto& tr : permutation_transforms()) {
      if (tr.kind == TransformKind::Identity) continue;
      const std::size_t n = transformed_grid(tr, g).n() + 1;
      add_case("invert_attention." + tr.name(),
          [tr, g](Tape&, Var x) { return invert_attention(x, tr, g); }, row_stochastic(rng, n),
          {n, n});
    }
    const GridShape src{3, 3}, dst{2, 4};
    add_case("resize_attention",
        [src, dst](Tape&, Var x) { return resize_attention(x, src, dst); },
        row_stochastic(rng, src.n() + 1), {dst.n() + 1, dst.n() + 1});
  }

  std::vector<GradCheckEntry> out;
  GradCheckOptions opts;
  opts.step = options.step;
  for (const auto& c : cases) {
    GradCheckEntry e;
    e.name = c.name;
    e.report = grad_check_report(c.fn, c.x, opts);
    e.passed = e.report.checked > 0 && e.report.max_rel_error < options.tolerance;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<GradCheckEntry> check_loss_gradients(const TrainConfig& config,
                                                 const GradCheckSuiteOptions& options) {
  config.validate();
  const ViTConfig& vit = config.vit;
  if (vit.num_classes > kMaxShapeClasses || vit.channels != 3) {
    throw ContractError("grad-check needs a 3-channel model with at most " +
                        std::to_string(kMaxShapeClasses) + " classes");
  }
  SynthConfig sc;
  sc.num_samples = 1;
  sc.num_classes = vit.num_classes;
  sc.height = vit.image_height();
  sc.width = vit.image_width();
  sc.seed = options.seed;
  const SyntheticSample sample = generate_sample(sc, 0);
  Parameters params = init_parameters(vit, Rng::derive(options.seed, 7));
  const LayerRange layers = config.resolve_loss_layers();

  enum class Which { Cls, Act, Aff };
  // Per-layer sign(a - b) of the checked region. When set, L1 is evaluated
  // as mean(s * (a - b)) with s held fixed.
  using Signs = std::vector<Tensor>;
  const auto region_of = [&](Var m, Which which, std::size_t n) {
    return which == Which::Act ? slice(m, 0, 1, 1, n) : slice(m, 1, n, 1, n);
  };
  const auto loss_on = [&](Tape& tape, const SpatialTransform& t, Which which,
                           const Signs* frozen, Signs* record) {
    const Tensor view_b = augment(sample.image, t, vit.patch_size);
    const ForwardResult ra = forward(tape, sample.image, params, vit);
    const ForwardResult rb = forward(tape, view_b, params, vit);
    std::vector<Var> la, lb;
    for (std::size_t l = layers.first; l <= layers.last; ++l) {
      la.push_back(ra.attentions[l].matrix);
      lb.push_back(rb.attentions[l].matrix);
    }
    if (which == Which::Cls) {
      const LossWeights none{.alpha = 0.0, .beta = 0.0, .distance = config.weights.distance};
      const Var zero = tape.constant(Tensor::scalar(0.0));
      return total_loss(ra.logits, rb.logits, sample.targets(), zero, zero, none).l_cls;
    }
    if (!frozen) {
      if (record) {
        const std::size_t n = ra.grid.n();
        for (std::size_t i = 0; i < la.size(); ++i) {
          const Tensor diff =
              sub(region_of(la[i], which, n),
                  region_of(invert_attention(lb[i], t, ra.grid), which, n))
                  .value();
          Tensor sign(diff.shape());
          for (std::size_t k = 0; k < diff.numel(); ++k)
            sign[k] = diff[k] > 0.0 ? 1.0 : diff[k] < 0.0 ? -1.0 : 0.0;
          record->push_back(std::move(sign));
        }
      }
      return which == Which::Act
                 ? region_activation_loss(la, lb, t, ra.grid, config.weights.distance)
                 : region_affinity_loss(la, lb, t, ra.grid, config.weights.distance);
    }
    const std::size_t n = ra.grid.n();
    Var acc;
    for (std::size_t i = 0; i < la.size(); ++i) {
      const Var diff = sub(region_of(la[i], which, n),
                           region_of(invert_attention(lb[i], t, ra.grid), which, n));
      const Var d = mean(mul(diff, tape.constant((*frozen)[i])));
      acc = i == 0 ? d : add(acc, d);
    }
    return la.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(la.size()));
  };

  std::vector<SpatialTransform> transforms;
  for (const auto& t : config.augmentations) {
    const bool seen = std::any_of(transforms.begin(), transforms.end(),
                                  [&](const SpatialTransform& s) { return s == t; });
    if (!seen) transforms.push_back(t);
  }

  Rng rng(Rng::derive(options.seed, 8));
  std::vector<GradCheckEntry> out;
  const std::pair<Which, const char*> losses[] = {
      {Which::Cls, "l_cls"}, {Which::Act, "l_act"}, {Which::Aff, "l_aff"}};
  for (const auto& [which, loss_name] : losses) {
    const bool freeze = which != Which::Cls && config.weights.distance == Distance::L1;
    for (const auto& t : transforms) {
      params.zero_grad();
      Signs signs;
      {
        Tape tape;
        tape.backward(loss_on(tape, t, which, nullptr, freeze ? &signs : nullptr));
      }
      std::vector<std::vector<double>> analytic;
      for (const auto& e : params.entries()) {
        const auto g = e.tensor.grad();
        analytic.emplace_back(g.begin(), g.end());
      }
      for (std::size_t p = 0; p < params.entries().size(); ++p) {
        Tensor& target = params.entries()[p].tensor;
        GradCheckOptions opts;
        opts.step = options.step;
        const std::size_t take = std::min(options.coordinates_per_tensor, target.numel());
        for (std::size_t c = 0; c < take; ++c) opts.coordinates.push_back(rng.index(target.numel()));
        const auto value = [&]() {
          Tape tape;
          return loss_on(tape, t, which, freeze ? &signs : nullptr, nullptr).value().item();
        };
        GradCheckEntry e;
        e.name = std::string(loss_name) + "/" + t.name() + "/" + params.entries()[p].name;
        e.report = finite_difference_check(value, target, analytic[p], opts);
        e.passed = e.report.max_rel_error < options.tolerance;
        out.push_back(std::move(e));
      }
    }
  }
  params.zero_grad();
  return out;
}

bool all_passed(const std::vector<GradCheckEntry>& entries) {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

nlohmann::json to_json(const std::vector<GradCheckEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"name", e.name},
                   {"passed", e.passed},
                   {"max_rel_error", e.report.max_rel_error},
                   {"worst_index", e.report.worst_index},
                   {"worst_analytic", e.report.worst_analytic},
                   {"worst_numeric", e.report.worst_numeric},
                   {"checked", e.report.checked},
                   {"skipped", e.report.skipped}});
  }
  return arr;
}

}  // namespace acr
