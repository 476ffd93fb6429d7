#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "acr/localization.hpp"
#include "acr/mask.hpp"

namespace acr {

/// Pooled per-class pixel counts. Class 0 is background.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(std::size_t num_classes);

  void add(const LabelMask& pred, const LabelMask& gt);
  /// Associative and commutative.
  void merge(const ConfusionAccumulator& other);

  std::size_t num_classes() const { return intersection_.size(); }
  std::uint64_t intersection(std::size_t k) const { return intersection_[k]; }
  std::uint64_t union_count(std::size_t k) const { return union_[k]; }
  std::uint64_t false_positive(std::size_t k) const { return fp_[k]; }
  std::uint64_t false_negative(std::size_t k) const { return fn_[k]; }
  std::uint64_t total_pixels() const { return total_; }
  /// Foreground pixels predicted with the wrong label.
  std::uint64_t foreground_fp() const { return fg_fp_; }
  /// Foreground ground-truth pixels missed or mislabeled.
  std::uint64_t foreground_fn() const { return fg_fn_; }

  friend bool operator==(const ConfusionAccumulator&, const ConfusionAccumulator&) = default;

 private:
  std::vector<std::uint64_t> intersection_, union_, fp_, fn_;
  std::uint64_t total_ = 0;
  std::uint64_t fg_fp_ = 0;
  std::uint64_t fg_fn_ = 0;
};

struct MiouResult {
  std::vector<std::optional<double>> per_class;  // nullopt: absent in pred and gt
  std::optional<double> mean;                    // nullopt: empty dataset
};

MiouResult miou(const ConfusionAccumulator& acc);
MiouResult miou(std::span<const LabelMask> pred, std::span<const LabelMask> gt,
                std::size_t num_classes);

/// FP = foreground pixels predicted with a label that differs from the
/// ground truth, FN = ground-truth foreground pixels not predicted with their
/// label; both divided by the total pixel count.
struct FpFn {
  double fp = 0.0;
  double fn = 0.0;
};

FpFn fp_fn_rates(const ConfusionAccumulator& acc);
FpFn fp_fn_rates(std::span<const LabelMask> pred, std::span<const LabelMask> gt);
FpFn fp_fn_rates(const LabelMask& pred, const LabelMask& gt);

/// {0.05, 0.10, ..., 0.95} for step 0.05.
std::vector<double> threshold_grid(double step = 0.05);

struct ThresholdSweep {
  double best_threshold = 0.0;
  std::optional<double> best_miou;
  FpFn best_fp_fn;
  std::vector<double> thresholds;
  std::vector<std::optional<double>> miou_curve;
};

/// `maps[i]` holds the maps of image i at the resolution of gt[i].
/// Ties are broken by the smaller threshold.
ThresholdSweep best_threshold_miou(std::span<const std::vector<LocalizationMap>> maps,
                                   std::span<const LabelMask> gt, std::size_t num_classes,
                                   std::span<const double> thresholds);
ThresholdSweep best_threshold_miou(std::span<const std::vector<LocalizationMap>> maps,
                                   std::span<const LabelMask> gt, std::size_t num_classes);

nlohmann::json to_json(const MiouResult& r);
nlohmann::json to_json(const ThresholdSweep& s);

}  // namespace acr
