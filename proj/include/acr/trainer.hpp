#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "acr/layer_range.hpp"
#include "acr/localization.hpp"
#include "acr/metrics.hpp"
#include "acr/regularizer.hpp"
#include "acr/synth_data.hpp"
#include "acr/vit.hpp"

namespace acr {

enum class OptimizerKind { Sgd, Momentum, Adam };

struct LocalizationConfig {
  std::optional<LayerRange> layers;  // default: last two layers
  bool refined = true;
  double threshold_step = 0.05;

  LayerRange resolve_layers(std::size_t num_layers) const;
};

struct TrainConfig {
  ViTConfig vit;
  LossWeights weights;
  std::vector<SpatialTransform> augmentations{
      SpatialTransform::of(TransformKind::FlipH)};
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  double learning_rate = 0.01;
  OptimizerKind optimizer = OptimizerKind::Momentum;
  double momentum = 0.9;      // also Adam's first-moment decay
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;  // decoupled for Adam
  bool poly_lr = false;
  double poly_power = 0.9;
  double grad_clip = 5.0;  // global L2 norm; <= 0 disables
  std::uint64_t seed = 0;
  std::optional<LayerRange> loss_layers;  // default: all layers
  LocalizationConfig localization;
  double holdout = 0.0;  // fraction of samples held out for per-epoch seed mIoU
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2};

  void validate() const;
  LayerRange resolve_loss_layers() const;
};

/// Plain-text `key = value` format; `#` starts a comment. See
/// config_keys() for the recognised keys. Unknown keys are errors.
TrainConfig parse_train_config(std::string_view text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string to_config_text(const TrainConfig& config);
void apply_config_value(TrainConfig& config, std::string_view key, std::string_view value);
const std::vector<std::string>& config_keys();

std::vector<SpatialTransform> parse_augmentations(std::string_view text);

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown mean_loss;
  double learning_rate = 0.0;
  std::optional<double> holdout_seed_miou;
};

nlohmann::json to_json(const EpochLog& log);

struct TrainResult {
  Parameters params;
  std::vector<EpochLog> log;
};

struct TrainHooks {
  /// Where a diagnostic dump is written if a step produces NaN/Inf.
  std::optional<std::filesystem::path> dump_dir;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Loss of one image and its augmented view on shared parameters. When
/// `backward_scale` is set, backpropagates total * scale into params.grad.
LossBreakdown siamese_step(Parameters& params, const TrainConfig& config,
                           const SyntheticSample& sample, const SpatialTransform& t,
                           std::optional<double> backward_scale);

TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const TrainHooks& hooks = {});

/// Writes checkpoint.bin, metrics.jsonl and config.txt into `out_dir`.
TrainResult train_to_directory(const TrainConfig& config, const Dataset& dataset,
                               const std::filesystem::path& out_dir);

/// Gradient evidence for every present class of one image.
ImageEvidence collect_evidence(const Parameters& params, const ViTConfig& config,
                               const SyntheticSample& sample);

struct EvalOptions {
  LocalizationConfig localization;
  bool layer_sweep = true;
  std::size_t jobs = 1;
};

struct EvalReport {
  LayerRange layers;
  bool refined = true;
  ThresholdSweep unrefined;
  ThresholdSweep refined_sweep;
  std::vector<LayerSweepRow> sweep;
  std::size_t images = 0;

  /// Headline best-threshold mIoU (refined or not, per `refined`).
  std::optional<double> seed_miou() const {
    return refined ? refined_sweep.best_miou : unrefined.best_miou;
  }
  nlohmann::json to_json() const;
};

EvalReport evaluate(const Parameters& params, const ViTConfig& config,
                    const Dataset& dataset, const EvalOptions& options);

// ---------------------------------------------------------------------------
// Ablations

struct AblationCell {
  std::string name;
  double alpha = 0.0;
  double beta = 0.0;
  Distance distance = Distance::L1;
  std::vector<SpatialTransform> augmentations;
};

struct AblationRow {
  AblationCell cell;
  std::vector<std::uint64_t> seeds;
  std::vector<double> unrefined_miou;  // per seed
  std::vector<double> refined_miou;    // per seed
  double mean_unrefined = 0.0;
  double mean_refined = 0.0;
};

/// {act off/on} x {aff off/on}, with the base config's alpha/beta as "on".
std::vector<AblationCell> regularizer_grid(const TrainConfig& base);
/// L1 / L2 / smooth-L1 at the base weights.
std::vector<AblationCell> distance_sweep(const TrainConfig& base);
/// no-regularization baseline plus resize, rotation, flip+resize, flip h+v, flip h.
std::vector<AblationCell> augmentation_sweep(const TrainConfig& base);

using AblationProgress = std::function<void(const AblationCell&, std::uint64_t seed,
                                            const EvalReport&)>;

std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& dataset,
                                      const std::vector<AblationCell>& cells,
                                      const EvalOptions& eval_options,
                                      const AblationProgress& progress = {});

nlohmann::json ablation_table(std::string_view title, const std::vector<AblationRow>& rows);

}  // namespace acr
