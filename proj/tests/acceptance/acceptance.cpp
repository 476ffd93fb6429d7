// Acceptance harness: one PASS/FAIL line per criterion.
//
// Usage: acceptance [criterion ids...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "acr/autodiff.hpp"
#include "acr/error.hpp"
#include "acr/gradcheck.hpp"
#include "acr/grid_transform.hpp"
#include "acr/localization.hpp"
#include "acr/metrics.hpp"
#include "acr/regularizer.hpp"
#include "acr/rng.hpp"
#include "acr/synth_data.hpp"
#include "acr/trainer.hpp"
#include "acr/vit.hpp"

using namespace acr;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  std::function<Outcome()> run;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t({r, c});
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path data_dir() { return ACR_TEST_DATA_DIR; }

// ---------------------------------------------------------------------------

Outcome fast_inversion_vs_oracle() {
  const auto t0 = Clock::now();
  Rng rng(1);
  double worst = 0.0;
  for (std::size_t h = 1; h <= 6; ++h)
    for (std::size_t w = 1; w <= 6; ++w)
      for (const auto& t : permutation_transforms())
        for (int trial = 0; trial < 20; ++trial) {
          const GridShape g{h, w};
          const Tensor ap = random_matrix(rng, g.n() + 1, g.n() + 1);
          const Tensor fast = invert_attention_fast(ap, t, g);
          Tensor block({g.n(), g.n()});
          for (std::size_t i = 0; i < g.n(); ++i)
            for (std::size_t j = 0; j < g.n(); ++j) block.at(i, j) = ap.at(i + 1, j + 1);
          const Tensor oracle = invert_attention_kronecker(block, t, g);
          for (std::size_t i = 0; i < g.n(); ++i)
            for (std::size_t j = 0; j < g.n(); ++j)
              worst = std::max(worst, std::abs(fast.at(i + 1, j + 1) - oracle.at(i, j)));
        }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 30.0,
          "max |fast - kron| = " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome group_laws() {
  Rng rng(2);
  std::size_t violations = 0;
  const auto perm = [](TransformKind k, const GridShape& g) {
    return token_permutation(SpatialTransform::of(k), g);
  };
  for (int trial = 0; trial < 50; ++trial) {
    const GridShape g{1 + rng.index(8), 1 + rng.index(8)};
    const GridShape gt{g.w, g.h};
    for (const auto& t : permutation_transforms()) {
      const auto fwd = token_permutation(t, g);
      const auto back = token_permutation(inverse_transform(t, g), transformed_grid(t, g));
      violations += !TokenPermutation::compose(fwd, back).is_identity();
      violations += !TokenPermutation::compose(back, fwd).is_identity();
      violations += !fwd.is_bijection();
    }
    const auto fh = perm(TransformKind::FlipH, g), fv = perm(TransformKind::FlipV, g);
    violations += !TokenPermutation::compose(fh, fh).is_identity();
    violations += !TokenPermutation::compose(fv, fv).is_identity();
    violations += TokenPermutation::compose(fh, fv).sigma != perm(TransformKind::FlipHV, g).sigma;
    const auto r90 = perm(TransformKind::Rot90, g), r90t = perm(TransformKind::Rot90, gt);
    const auto r180 = TokenPermutation::compose(r90, r90t);
    violations += r180 != perm(TransformKind::Rot180, g);
    violations += !TokenPermutation::compose(r180, TokenPermutation::compose(r90, r90t)).is_identity();
    const auto fht = perm(TransformKind::FlipH, gt);
    violations += TokenPermutation::compose(TokenPermutation::compose(fh, r90), fht) !=
                  TokenPermutation::compose(fh, TokenPermutation::compose(r90, fht));
  }
  return {violations == 0, std::to_string(violations) + " violations over 50 grids"};
}

Outcome commutation_exact() {
  Rng rng(3);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t l = 1 + rng.index(6), m = 1 + rng.index(6);
    const Tensor h = random_matrix(rng, l, m);
    mismatches += !(dense::matmul(dense::commutation(l, m), dense::vec(h)) ==
                    dense::vec(dense::transpose(h)));
  }
  return {mismatches == 0, std::to_string(mismatches) + " inexact of 100"};
}

Outcome end_to_end_equivariance() {
  const ViTConfig config;
  Parameters params = init_parameters(config, 4);
  for (double& v : params.get("pos_embed").values()) v = 0.0;
  const Parameters& frozen = params;
  Rng rng(5);
  double worst = 0.0;
  const std::size_t p = config.patch_size, h = config.image_height(), w = config.image_width();
  for (int image = 0; image < 20; ++image) {
    Tensor img({config.channels, h, w});
    for (std::size_t c = 0; c < config.channels; ++c)
      for (std::size_t gr = 0; gr < config.grid.h; ++gr)
        for (std::size_t gc = 0; gc < config.grid.w; ++gc) {
          const double v = rng.uniform();
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x) img[(c * h + gr * p + y) * w + gc * p + x] = v;
        }
    Tape base_tape;
    const auto base = forward(base_tape, img, frozen, config);
    for (const auto& t : permutation_transforms()) {
      Tape view_tape;
      const auto view = forward(view_tape, augment(img, t, p), frozen, config);
      worst = std::max(worst, max_abs_diff(view.logits.value(), base.logits.value()));
      for (std::size_t l = 0; l < config.num_layers; ++l) {
        const Tensor back = invert_attention_fast(view.attentions[l].value(), t, config.grid);
        worst = std::max(worst, max_abs_diff(back, base.attentions[l].value()));
      }
    }
  }
  return {worst <= 1e-9, "max deviation " + fmt("%.3g", worst) + " over 20 images x 7 transforms"};
}

/// Default toy model, three augmentation kinds.
TrainConfig grad_check_config() {
  TrainConfig c;
  c.augmentations = parse_augmentations("flip_h,rot90,resize:6x10");
  return c;
}

Outcome finite_differences() {
  const auto t0 = Clock::now();
  GradCheckSuiteOptions opts;
  opts.tolerance = 1e-4;
  opts.step = 1e-5;
  auto entries = check_op_gradients(opts);
  const auto losses = check_loss_gradients(grad_check_config(), opts);
  entries.insert(entries.end(), losses.begin(), losses.end());
  double worst = 0.0;
  std::string worst_name;
  std::size_t failed = 0;
  for (const auto& e : entries) {
    failed += !e.passed;
    if (e.report.max_rel_error > worst) {
      worst = e.report.max_rel_error;
      worst_name = e.name;
    }
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && secs < 300.0,
          std::to_string(entries.size()) + " checks, " + std::to_string(failed) +
              " failed, worst " + fmt("%.3g", worst) + " (" + worst_name + "), " +
              fmt("%.1f", secs) + " s"};
}

Outcome zero_loss_fixed_points() {
  const ViTConfig config;
  const Parameters params = init_parameters(config, 6);
  const SynthConfig sc{.num_samples = 5, .num_classes = 5, .seed = 7};
  const auto flip = SpatialTransform::of(TransformKind::FlipH);
  double worst = 0.0;
  for (std::size_t i = 0; i < sc.num_samples; ++i) {
    const SyntheticSample s = generate_sample(sc, i);
    Tape ta, tb, tc;
    const auto a = forward(ta, s.image, params, config);
    const auto same = forward(tb, augment(s.image, SpatialTransform::identity()), params, config);
    const auto twice = forward(tc, augment(augment(s.image, flip), flip), params, config);
    std::vector<Tensor> av, sv, tv;
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      av.push_back(a.attentions[l].value());
      sv.push_back(invert_attention_fast(same.attentions[l].value(), SpatialTransform::identity(),
                                         config.grid));
      tv.push_back(invert_attention_fast(invert_attention_fast(twice.attentions[l].value(), flip,
                                                               config.grid),
                                         flip, config.grid));
    }
    for (const auto* other : {&sv, &tv}) {
      worst = std::max(worst, region_activation_loss(av, *other, SpatialTransform::identity(),
                                                     config.grid));
      worst = std::max(worst, region_affinity_loss(av, *other, SpatialTransform::identity(),
                                                   config.grid));
    }
  }
  return {worst == 0.0, "max l_act/l_aff = " + fmt("%.3g", worst)};
}

Outcome seed_scale_invariance() {
  const ViTConfig config;
  const Parameters params = init_parameters(config, 8);
  const SynthConfig sc{.num_samples = 5, .num_classes = 5, .seed = 9};
  const LayerRange layers{2, 3};
  std::size_t mismatches = 0, comparisons = 0;
  for (std::size_t i = 0; i < sc.num_samples; ++i) {
    const SyntheticSample s = generate_sample(sc, i);
    const ImageEvidence ev = collect_evidence(params, config, s);
    for (double c : {1e-3, 0.37, 7.5, 1e3}) {
      ImageEvidence scaled = ev;
      for (auto& stack : scaled.adjoints)
        for (auto& t : stack)
          for (double& v : t.values()) v *= c;
      for (bool refined : {false, true}) {
        const auto a = localize(ev, layers, refined, 32, 32);
        const auto b = localize(scaled, layers, refined, 32, 32);
        for (double theta : threshold_grid()) {
          ++comparisons;
          mismatches += !(seed_from_maps(a, theta, 32, 32).mask ==
                          seed_from_maps(b, theta, 32, 32).mask);
        }
      }
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " differing seed masks of " +
                               std::to_string(comparisons)};
}

Outcome metrics_vs_brute_force() {
  Rng rng(10);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.index(5);
    LabelMask pred(16, 16), gt(16, 16);
    for (auto& v : pred.labels) v = static_cast<std::uint16_t>(rng.index(k));
    for (auto& v : gt.labels) v = static_cast<std::uint16_t>(rng.index(k));
    std::vector<std::uint64_t> inter(k, 0), uni(k, 0);
    std::uint64_t fp = 0, fn = 0;
    for (std::size_t i = 0; i < 256; ++i) {
      const auto p = pred.labels[i], g = gt.labels[i];
      for (std::size_t c = 0; c < k; ++c) {
        inter[c] += (p == c && g == c);
        uni[c] += (p == c || g == c);
      }
      fp += (p != 0 && p != g);
      fn += (g != 0 && p != g);
    }
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < k; ++c)
      if (uni[c] > 0) {
        sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        ++counted;
      }
    const std::vector<LabelMask> pv{pred}, gv{gt};
    const auto r = miou(pv, gv, k);
    const auto rates = fp_fn_rates(pred, gt);
    mismatches += !(r.mean && *r.mean == sum / static_cast<double>(counted));
    mismatches += rates.fp != static_cast<double>(fp) / 256.0;
    mismatches += rates.fn != static_cast<double>(fn) / 256.0;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over 100 mask pairs"};
}

Outcome reproducible_training() {
  const auto root = std::filesystem::temp_directory_path() / "acr_acceptance_repro";
  std::filesystem::remove_all(root);
  TrainConfig c = load_train_config(data_dir() / "toy.cfg");
  c.epochs = 3;
  const Dataset d = generate({.num_samples = 16, .num_classes = c.vit.num_classes,
                              .height = c.vit.image_height(), .width = c.vit.image_width(),
                              .seed = 12});
  train_to_directory(c, d, root / "a");
  train_to_directory(c, d, root / "b");
  const bool metrics = slurp(root / "a" / "metrics.jsonl") == slurp(root / "b" / "metrics.jsonl");
  const bool ckpt = slurp(root / "a" / "checkpoint.bin") == slurp(root / "b" / "checkpoint.bin");
  std::filesystem::remove_all(root);
  return {metrics && ckpt, std::string("metrics.jsonl ") + (metrics ? "identical" : "differ") +
                               ", checkpoint.bin " + (ckpt ? "identical" : "differ")};
}

Outcome loss_decreases() {
  TrainConfig c = load_train_config(data_dir() / "toy.cfg");
  c.epochs = 20;
  const Dataset d = generate({.num_samples = 50, .num_classes = c.vit.num_classes,
                              .height = c.vit.image_height(), .width = c.vit.image_width(),
                              .seed = 13});
  bool all = true;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    c.seed = seed;
    const TrainResult r = train(c, d);
    const double first = r.log.front().mean_loss.total, last = r.log.back().mean_loss.total;
    all = all && last < first;
    detail += "seed " + std::to_string(seed) + ": " + fmt("%.4f", first) + " -> " +
              fmt("%.4f", last) + (seed < 2 ? "; " : "");
  }
  return {all, detail};
}

Outcome ablation_ordering() {
  const TrainConfig base = load_train_config(data_dir() / "ablation.cfg");
  const Dataset d = generate({.num_samples = 500, .num_classes = base.vit.num_classes,
                              .height = base.vit.image_height(),
                              .width = base.vit.image_width(), .seed = 0});
  EvalOptions eval;
  eval.localization = base.localization;
  eval.layer_sweep = false;
  double slowest = 0.0;
  auto t_run = Clock::now();
  const auto rows = run_ablation(base, d, regularizer_grid(base), eval,
                                 [&](const AblationCell& cell, std::uint64_t seed,
                                     const EvalReport& report) {
                                   const double secs = seconds_since(t_run);
                                   slowest = std::max(slowest, secs);
                                   std::cout << "    " << cell.name << " seed " << seed
                                             << ": unrefined "
                                             << fmt("%.2f", 100.0 * *report.unrefined.best_miou)
                                             << " refined "
                                             << fmt("%.2f", 100.0 * *report.refined_sweep.best_miou)
                                             << " (" << fmt("%.0f", secs) << " s)\n"
                                             << std::flush;
                                   t_run = Clock::now();
                                 });
  // Rows follow regularizer_grid: baseline, act only, aff only, both.
  const double baseline = 100.0 * rows[0].mean_refined, act = 100.0 * rows[1].mean_refined,
               aff = 100.0 * rows[2].mean_refined, full = 100.0 * rows[3].mean_refined;
  bool refined_wins = true;
  std::string per_cell;
  for (const auto& row : rows) {
    refined_wins = refined_wins && row.mean_refined > row.mean_unrefined;
    per_cell += " " + row.cell.name + " " + fmt("%.2f", 100.0 * row.mean_unrefined) + "/" +
                fmt("%.2f", 100.0 * row.mean_refined);
  }
  const bool ordering = baseline < act && baseline < aff && act < full && aff < full;
  const bool margin = full >= baseline + 3.0;
  return {ordering && margin && refined_wins && slowest <= 600.0,
          "refined mIoU baseline " + fmt("%.2f", baseline) + ", act " + fmt("%.2f", act) +
              ", aff " + fmt("%.2f", aff) + ", act+aff " + fmt("%.2f", full) +
              "; ordering " + (ordering ? "ok" : "violated") + ", margin " +
              fmt("%+.2f", full - baseline) + ", refined>unrefined " +
              (refined_wins ? "everywhere" : "violated") + " (unrefined/refined:" + per_cell +
              "), slowest run " + fmt("%.0f", slowest) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "fast inversion == Kronecker oracle (1e-12, h,w in 1..6, <30 s)", fast_inversion_vs_oracle},
      {2, "token permutation group laws on 50 random grids", group_laws},
      {3, "C vec(H) == vec(H^T) exactly, 100 random H", commutation_exact},
      {4, "end-to-end equivariance without positional embeddings (1e-9)", end_to_end_equivariance},
      {5, "finite differences: ops and L_cls/L_act/L_aff (rel < 1e-4, <5 min)", finite_differences},
      {6, "identity and double flip give l_act = l_aff = 0 exactly", zero_loss_fixed_points},
      {7, "ablation ordering on 500 samples x 3 seeds", ablation_ordering},
      {8, "seed masks invariant to positive adjoint scaling", seed_scale_invariance},
      {9, "mIoU and FP/FN equal a brute-force counter", metrics_vs_brute_force},
      {10, "same-seed train runs give byte-identical outputs", reproducible_training},
      {11, "loss on a 50-sample toy set decreases over 20 epochs, 3 seeds", loss_decreases},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.title << " :: "
              << o.detail << "\n"
              << std::flush;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << "\n";
  return failures == 0 ? 0 : 1;
}
