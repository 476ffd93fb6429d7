#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "acr/error.hpp"
#include "acr/gradcheck.hpp"
#include "acr/grid_transform.hpp"
#include "acr/image_io.hpp"
#include "acr/localization.hpp"
#include "acr/log.hpp"
#include "acr/rng.hpp"
#include "acr/synth_data.hpp"
#include "acr/trainer.hpp"
#include "acr/vit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitContract = 1;
constexpr int kExitNumerical = 2;

const char* kFooter =
    "Exit codes:\n"
    "  0  success\n"
    "  1  validation or contract error (bad arguments, shapes, files, configs)\n"
    "  2  numerical failure (NaN/Inf during training, failed gradient or inversion check)\n"
    "\n"
    "Environment:\n"
    "  ACR_LOG  log verbosity on stderr: error, warn (default), info, debug";

struct Common {
  bool pretty = false;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

std::size_t default_jobs() {
  return std::max(1u, std::thread::hardware_concurrency());
}

void print_json(const json& j, bool pretty) { std::cout << (pretty ? j.dump(2) : j.dump()) << '\n'; }

std::string fixed(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string opt_fixed(const std::optional<double>& v) { return v ? fixed(*v) : "n/a"; }

void print_table(const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  const auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < width.size(); ++c) {
      std::cout << std::left << std::setw(static_cast<int>(width[c]) + 2) << (c < r.size() ? r[c] : "");
    }
    std::cout << '\n';
  };
  line(header);
  std::vector<std::string> rule;
  for (auto w : width) rule.emplace_back(w, '-');
  line(rule);
  for (const auto& r : rows) line(r);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const fs::path& out, std::size_t samples, std::size_t classes,
                 std::size_t size, const Common& common) {
  acr::SynthConfig sc;
  sc.num_samples = samples;
  sc.num_classes = classes;
  sc.height = size;
  sc.width = size;
  sc.seed = common.seed.value_or(0);
  const auto ds = acr::generate(sc);
  acr::save_dataset(out, ds);
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& s : ds.samples)
    for (std::size_t k = 0; k < classes; ++k) counts[k] += s.labels[k];
  if (common.pretty) {
    std::cout << "wrote " << samples << " samples (" << size << "x" << size << ") to " << out << '\n';
    std::vector<std::vector<std::string>> rows;
    for (std::size_t k = 0; k < classes; ++k)
      rows.push_back({std::to_string(k), acr::shape_class_names()[k], std::to_string(counts[k])});
    print_table({"class", "shape", "images"}, rows);
  } else {
    print_json({{"out", out.string()},
                {"samples", samples},
                {"classes", classes},
                {"seed", sc.seed},
                {"class_counts", counts}},
               false);
  }
  return kExitOk;
}

struct TrainOverrides {
  std::optional<double> alpha, beta;
  std::optional<std::string> distance, aug;
  std::optional<std::size_t> epochs;
};

acr::TrainConfig load_config_with(const std::optional<fs::path>& path, const TrainOverrides& o,
                                  const Common& common) {
  acr::TrainConfig cfg = path ? acr::load_train_config(*path) : acr::TrainConfig{};
  if (o.alpha) cfg.weights.alpha = *o.alpha;
  if (o.beta) cfg.weights.beta = *o.beta;
  if (o.distance) cfg.weights.distance = acr::parse_distance(*o.distance);
  if (o.aug) cfg.augmentations = acr::parse_augmentations(*o.aug);
  if (o.epochs) cfg.epochs = *o.epochs;
  if (common.seed) cfg.seed = *common.seed;
  cfg.validate();
  return cfg;
}

int cmd_train(const std::optional<fs::path>& config, const fs::path& data, const fs::path& out,
              const TrainOverrides& o, const Common& common) {
  const auto cfg = load_config_with(config, o, common);
  const auto ds = acr::load_dataset(data);
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = acr::train_to_directory(cfg, ds, out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& last = result.log.back();
  if (common.pretty) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : result.log) {
      rows.push_back({std::to_string(e.epoch), fixed(e.mean_loss.l_cls), fixed(e.mean_loss.l_act, 6),
                      fixed(e.mean_loss.l_aff, 6), fixed(e.mean_loss.total), fixed(e.learning_rate, 6),
                      opt_fixed(e.holdout_seed_miou)});
    }
    print_table({"epoch", "l_cls", "l_act", "l_aff", "total", "lr", "holdout_miou"}, rows);
    std::cout << "checkpoint: " << (out / "checkpoint.bin").string() << "  (" << fixed(secs, 1)
              << " s)\n";
  } else {
    print_json({{"checkpoint", (out / "checkpoint.bin").string()},
                {"metrics", (out / "metrics.jsonl").string()},
                {"epochs", result.log.size()},
                {"final", acr::to_json(last)},
                {"seconds", secs}},
               false);
  }
  return kExitOk;
}

void print_eval_pretty(const acr::EvalReport& r) {
  std::cout << "images: " << r.images << "  layers: " << r.layers.str() << '\n';
  print_table({"maps", "best_threshold", "miou", "fp", "fn"},
              {{"unrefined", fixed(r.unrefined.best_threshold, 2), opt_fixed(r.unrefined.best_miou),
                fixed(r.unrefined.best_fp_fn.fp), fixed(r.unrefined.best_fp_fn.fn)},
               {"refined", fixed(r.refined_sweep.best_threshold, 2),
                opt_fixed(r.refined_sweep.best_miou), fixed(r.refined_sweep.best_fp_fn.fp),
                fixed(r.refined_sweep.best_fp_fn.fn)}});
  if (!r.sweep.empty()) {
    std::cout << "\nlayer sweep (" << (r.refined ? "refined" : "unrefined") << ")\n";
    std::vector<std::vector<std::string>> rows;
    for (const auto& s : r.sweep) {
      rows.push_back({std::to_string(s.start_layer) + "..", fixed(s.threshold, 2), fixed(s.miou),
                      fixed(s.fp), fixed(s.fn)});
    }
    print_table({"layers", "threshold", "miou", "fp", "fn"}, rows);
  }
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data, const std::string& refined,
             const std::optional<std::string>& layers, bool sweep, const Common& common) {
  const auto ck = acr::load_checkpoint(checkpoint);
  const auto ds = acr::load_dataset(data);
  acr::EvalOptions opts;
  if (refined != "on" && refined != "off") throw acr::ContractError("--refined must be on or off");
  opts.localization.refined = refined == "on";
  if (layers) opts.localization.layers = acr::LayerRange::parse(*layers);
  opts.layer_sweep = sweep;
  opts.jobs = common.jobs;
  const auto report = acr::evaluate(ck.params, ck.config, ds, opts);
  if (common.pretty) print_eval_pretty(report);
  else print_json(report.to_json(), false);
  return kExitOk;
}

int cmd_seeds(const fs::path& checkpoint, const fs::path& image_path, std::size_t cls,
              const fs::path& out, const std::optional<std::string>& layers, double threshold,
              const Common& common) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw acr::ContractError("--threshold must lie in [0, 1], got " + std::to_string(threshold));
  }
  const auto ck = acr::load_checkpoint(checkpoint);
  if (cls >= ck.config.num_classes) {
    throw acr::ContractError("--class " + std::to_string(cls) + " out of range (model has " +
                             std::to_string(ck.config.num_classes) + " classes)");
  }
  acr::SyntheticSample sample;
  sample.image = acr::read_image(image_path);
  sample.labels.assign(ck.config.num_classes, 0);
  sample.labels[cls] = 1;
  const std::size_t h = sample.image.dim(1), w = sample.image.dim(2);
  const auto ev = acr::collect_evidence(ck.params, ck.config, sample);
  acr::LocalizationConfig lc;
  if (layers) lc.layers = acr::LayerRange::parse(*layers);
  const auto range = lc.resolve_layers(ck.config.num_layers);
  fs::create_directories(out);
  acr::Tensor fused({ev.grid.n() + 1, ev.grid.n() + 1});
  for (std::size_t l = range.first; l <= range.last; ++l)
    for (std::size_t i = 0; i < fused.numel(); ++i)
      fused[i] += ev.attentions[l][i] / static_cast<double>(range.size());
  const fs::path attention_csv = out / "attention.csv";
  acr::write_csv(attention_csv, fused);
  json summary{{"class", cls},
               {"layers", range.str()},
               {"threshold", threshold},
               {"attention_csv", attention_csv.string()},
               {"maps", json::array()}};
  for (bool refined : {false, true}) {
    const auto maps = acr::localize(ev, range, refined, h, w);
    const auto& m = maps.front();
    acr::Tensor gray({1, h, w});
    for (std::size_t i = 0; i < m.values.size(); ++i) gray[i] = m.values[i];
    const std::string stem = std::string(refined ? "refined" : "unrefined") + "_class" + std::to_string(cls);
    acr::write_image(out / (stem + ".pgm"), gray);
    const fs::path seed_path = out / (stem + "_seed.pgm");
    acr::write_mask(seed_path, acr::seed_from_maps(maps, threshold).mask);
    json side{{"class", cls},
              {"class_name", cls < acr::shape_class_names().size() ? acr::shape_class_names()[cls] : ""},
              {"refined", refined},
              {"layers", range.str()},
              {"height", h},
              {"width", w},
              {"max", m.max()},
              {"pgm_scale", "gray = round(255 * map value)"},
              {"threshold", threshold},
              {"seed_mask", seed_path.string()},
              {"seed_labels", "0 background, class + 1 foreground"},
              {"attention_csv", attention_csv.string()},
              {"image", image_path.string()}};
    std::ofstream(out / (stem + ".json")) << side.dump(2) << '\n';
    summary["maps"].push_back({{"pgm", (out / (stem + ".pgm")).string()},
                               {"json", (out / (stem + ".json")).string()},
                               {"seed_mask", seed_path.string()},
                               {"refined", refined}});
  }
  print_json(summary, common.pretty);
  return kExitOk;
}

acr::Tensor random_attention(acr::Rng& rng, std::size_t n) {
  acr::Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (a.at(i, j) = rng.uniform(0.01, 1.0));
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) /= s;
  }
  return a;
}

int cmd_check_inversion(const std::string& grid_text, const std::string& transform, bool oracle,
                        std::size_t trials, const Common& common) {
  const auto g = acr::GridShape::parse(grid_text);
  const auto t = acr::SpatialTransform::parse(transform);
  t.validate();
  const auto view = acr::transformed_grid(t, g);
  acr::Rng rng(common.seed.value_or(0));
  json report{{"grid", g.str()}, {"transform", t.name()}, {"view_grid", view.str()},
              {"tokens", g.n() + 1}, {"trials", trials}};
  if (t.is_permutation()) {
    const auto perm = acr::token_permutation(t, g);
    report["bijection"] = perm.is_bijection();
  }
  double fast_ms = 0.0, oracle_ms = 0.0, worst = 0.0;
  bool ok = true;
  for (std::size_t k = 0; k < trials; ++k) {
    const auto a_prime = random_attention(rng, view.n() + 1);
    auto t0 = std::chrono::steady_clock::now();
    acr::Tensor restored;
    if (t.is_permutation()) {
      restored = acr::invert_attention_fast(a_prime, t, g);
    } else {
      acr::Tape tape;
      restored = acr::invert_attention(tape.constant(a_prime), t, g).value();
    }
    fast_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    for (std::size_t i = 0; i < restored.dim(0); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < restored.dim(1); ++j) s += restored.at(i, j);
      if (std::abs(s - 1.0) > 1e-9) ok = false;
    }
    if (oracle) {
      if (!t.is_permutation()) throw acr::UnsupportedTransformError("the dense oracle covers flips and rotations only");
      const std::size_t nv = view.n();
      acr::Tensor patch({nv, nv});
      for (std::size_t i = 0; i < nv; ++i)
        for (std::size_t j = 0; j < nv; ++j) patch.at(i, j) = a_prime.at(i + 1, j + 1);
      t0 = std::chrono::steady_clock::now();
      const auto dense = acr::invert_attention_kronecker(patch, t, g);
      oracle_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      for (std::size_t i = 0; i < g.n(); ++i)
        for (std::size_t j = 0; j < g.n(); ++j)
          worst = std::max(worst, std::abs(dense.at(i, j) - restored.at(i + 1, j + 1)));
    }
  }
  report["row_sums_preserved"] = ok;
  report["fast_ms"] = fast_ms / static_cast<double>(std::max<std::size_t>(trials, 1));
  if (oracle) {
    report["oracle_ms"] = oracle_ms / static_cast<double>(std::max<std::size_t>(trials, 1));
    report["max_abs_diff"] = worst;
    report["tolerance"] = 1e-12;
    if (worst > 1e-12) ok = false;
  }
  report["pass"] = ok;
  print_json(report, common.pretty);
  return ok ? kExitOk : kExitNumerical;
}

void print_ablation_pretty(const json& table) {
  std::cout << '\n' << table["table"].get<std::string>() << '\n';
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : table["rows"]) {
    std::string augs;
    for (const auto& a : r["augmentations"]) augs += (augs.empty() ? "" : ",") + a.get<std::string>();
    rows.push_back({r["name"].get<std::string>(), fixed(r["alpha"].get<double>(), 1),
                    fixed(r["beta"].get<double>(), 1), r["distance"].get<std::string>(), augs,
                    fixed(100.0 * r["mean_unrefined"].get<double>(), 2),
                    fixed(100.0 * r["mean_refined"].get<double>(), 2)});
  }
  print_table({"cell", "alpha", "beta", "distance", "augmentations", "miou", "miou_refined"}, rows);
}

int cmd_ablate(const std::optional<fs::path>& config, const fs::path& data,
               const std::vector<std::string>& tables, const TrainOverrides& o,
               const std::optional<std::string>& seeds, const Common& common) {
  auto cfg = load_config_with(config, o, common);
  if (seeds) {
    acr::apply_config_value(cfg, "ablate.seeds", *seeds);
    cfg.validate();
  }
  const auto ds = acr::load_dataset(data);
  acr::EvalOptions eo;
  eo.localization = cfg.localization;
  eo.layer_sweep = false;
  eo.jobs = common.jobs;
  const auto progress = [](const acr::AblationCell& cell, std::uint64_t seed, const acr::EvalReport& r) {
    acr::log::info("ablate ", cell.name, " seed ", seed, " miou=", r.unrefined.best_miou.value_or(0.0),
                   " refined=", r.refined_sweep.best_miou.value_or(0.0));
  };
  json out{{"tables", json::array()}};
  for (const auto& name : tables) {
    std::vector<acr::AblationCell> cells;
    std::string title;
    if (name == "regularizers") {
      cells = acr::regularizer_grid(cfg);
      title = "regularizer grid";
    } else if (name == "distance") {
      cells = acr::distance_sweep(cfg);
      title = "distance sweep";
    } else if (name == "augmentation") {
      cells = acr::augmentation_sweep(cfg);
      title = "augmentation sweep";
    } else {
      throw acr::ContractError("unknown ablation table '" + name + "'");
    }
    const auto rows = acr::run_ablation(cfg, ds, cells, eo, progress);
    const auto table = acr::ablation_table(title, rows);
    if (common.pretty) print_ablation_pretty(table);
    out["tables"].push_back(table);
  }
  if (!common.pretty) print_json(out, false);
  return kExitOk;
}

int cmd_grad_check(const std::optional<fs::path>& config, std::size_t coords, double tol,
                   bool ops_only, const Common& common) {
  const auto cfg = config ? acr::load_train_config(*config) : acr::TrainConfig{};
  acr::GradCheckSuiteOptions opts;
  opts.coordinates_per_tensor = coords;
  opts.tolerance = tol;
  opts.seed = common.seed.value_or(0);
  auto ops = acr::check_op_gradients(opts);
  std::vector<acr::GradCheckEntry> losses;
  if (!ops_only) losses = acr::check_loss_gradients(cfg, opts);
  const bool ok = acr::all_passed(ops) && acr::all_passed(losses);
  if (common.pretty) {
    std::vector<std::vector<std::string>> rows;
    for (const auto* set : {&ops, &losses}) {
      for (const auto& e : *set) {
        std::ostringstream err;
        err << std::scientific << std::setprecision(2) << e.report.max_rel_error;
        rows.push_back({e.name, err.str(), std::to_string(e.report.checked),
                        std::to_string(e.report.skipped), e.passed ? "ok" : "FAIL"});
      }
    }
    print_table({"check", "max_rel_error", "checked", "skipped", "status"}, rows);
    std::cout << (ok ? "all gradient checks passed" : "gradient check FAILED") << '\n';
  } else {
    print_json({{"passed", ok}, {"tolerance", tol}, {"step", opts.step},
                {"ops", acr::to_json(ops)}, {"losses", acr::to_json(losses)}},
               false);
  }
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-consistency training and seed localization for a small vision transformer"};
  app.footer(kFooter);
  app.require_subcommand(1);

  Common common;
  const auto add_common = [&](CLI::App* sub, bool with_jobs) {
    sub->add_flag("--pretty", common.pretty, "Human-readable tables instead of JSON");
    sub->add_option("--seed", common.seed, "Seed for all randomness");
    if (with_jobs) {
      common.jobs = default_jobs();
      sub->add_option("--jobs", common.jobs, "Worker threads")->check(CLI::PositiveNumber);
    }
    sub->footer(kFooter);
  };

  // gen-data
  fs::path gen_out;
  std::size_t gen_samples = 100, gen_classes = 5, gen_size = 32;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-label shapes dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--samples", gen_samples, "Number of images")->check(CLI::PositiveNumber);
  gen->add_option("--classes", gen_classes, "Number of shape classes (1-6)")->check(CLI::Range(1, 6));
  gen->add_option("--size", gen_size, "Image side in pixels");
  add_common(gen, false);

  // train
  std::optional<fs::path> cfg_path;
  fs::path data_dir, out_dir;
  TrainOverrides over;
  auto* tr = app.add_subcommand("train", "Train a model with the attention-consistency objective");
  tr->add_option("--config", cfg_path, "key = value config file");
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out_dir, "Output directory (checkpoint, metrics, config)")->required();
  tr->add_option("--alpha", over.alpha, "Weight of the activation consistency term");
  tr->add_option("--beta", over.beta, "Weight of the affinity consistency term");
  tr->add_option("--distance", over.distance, "l1, l2 or smooth_l1");
  tr->add_option("--aug", over.aug, "Comma-separated augmentation choices, e.g. flip_h,resize:6x6");
  tr->add_option("--epochs", over.epochs, "Override the number of epochs");
  add_common(tr, false);

  // eval
  fs::path ckpt;
  std::string refined = "on";
  std::optional<std::string> layers;
  bool no_sweep = false;
  auto* ev = app.add_subcommand("eval", "Seed mIoU, FP/FN and layer sweep on a dataset");
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--refined", refined, "Headline maps: on (affinity-refined) or off")
      ->check(CLI::IsMember({"on", "off"}));
  ev->add_option("--layers", layers, "Fused layer range A..B (default: last two)");
  ev->add_flag("--no-sweep", no_sweep, "Skip the layer sweep");
  add_common(ev, true);

  // seeds
  fs::path image_path;
  std::size_t cls = 0;
  auto* sd = app.add_subcommand("seeds", "Write refined and unrefined localization maps for one image");
  sd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  sd->add_option("--image", image_path, "PPM image")->required();
  sd->add_option("--class", cls, "Class index")->required();
  sd->add_option("--out", out_dir, "Output directory")->required();
  sd->add_option("--layers", layers, "Fused layer range A..B (default: last two)");
  double seed_threshold = 0.5;
  sd->add_option("--threshold", seed_threshold, "Seed threshold for the written seed masks")
      ->capture_default_str();
  add_common(sd, false);

  // check-inversion
  std::string grid_text, transform;
  bool oracle = false;
  std::size_t trials = 5;
  auto* ci = app.add_subcommand("check-inversion", "Check attention inversion for one grid and transform");
  ci->add_option("--grid", grid_text, "Grid HxW")->required();
  ci->add_option("--transform", transform,
                 "identity, flip_h, flip_v, flip_hv, rot90, rot180, rot270 or resize:HxW")
      ->required();
  ci->add_flag("--oracle", oracle, "Compare against the dense Kronecker construction");
  ci->add_option("--trials", trials, "Random attention matrices to test");
  add_common(ci, false);

  // ablate
  std::vector<std::string> tables{"regularizers", "distance", "augmentation"};
  std::optional<std::string> seeds;
  auto* ab = app.add_subcommand("ablate", "Regularizer grid, distance sweep and augmentation sweep");
  ab->add_option("--config", cfg_path, "key = value config file");
  ab->add_option("--data", data_dir, "Dataset directory")->required();
  ab->add_option("--tables", tables, "Subset of: regularizers distance augmentation")->delimiter(',');
  ab->add_option("--seeds", seeds, "Comma-separated training seeds (overrides ablate.seeds)");
  ab->add_option("--epochs", over.epochs, "Override the number of epochs");
  add_common(ab, true);

  // grad-check
  std::size_t coords = 3;
  double tol = 1e-4;
  bool ops_only = false;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference checks of ops and losses");
  gc->add_option("--config", cfg_path, "key = value config file");
  gc->add_option("--coords", coords, "Probed coordinates per parameter tensor");
  gc->add_option("--tolerance", tol, "Maximum relative error");
  gc->add_flag("--ops-only", ops_only, "Skip the end-to-end loss checks");
  add_common(gc, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitContract;
  }

  try {
    if (*gen) return cmd_gen_data(gen_out, gen_samples, gen_classes, gen_size, common);
    if (*tr) return cmd_train(cfg_path, data_dir, out_dir, over, common);
    if (*ev) return cmd_eval(ckpt, data_dir, refined, layers, !no_sweep, common);
    if (*sd) return cmd_seeds(ckpt, image_path, cls, out_dir, layers, seed_threshold, common);
    if (*ci) return cmd_check_inversion(grid_text, transform, oracle, trials, common);
    if (*ab) return cmd_ablate(cfg_path, data_dir, tables, over, seeds, common);
    if (*gc) return cmd_grad_check(cfg_path, coords, tol, ops_only, common);
  } catch (const acr::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitContract;
  }
  return kExitContract;
}
