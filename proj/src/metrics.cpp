#include "acr/metrics.hpp"

#include <cmath>

#include "acr/error.hpp"

namespace acr {

ConfusionAccumulator::ConfusionAccumulator(std::size_t num_classes)
    : intersection_(num_classes, 0),
      union_(num_classes, 0),
      fp_(num_classes, 0),
      fn_(num_classes, 0) {
  if (num_classes < 1) throw ContractError("need at least the background class");
}

void ConfusionAccumulator::add(const LabelMask& pred, const LabelMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width ||
      pred.labels.size() != gt.labels.size()) {
    throw DimensionError("prediction and ground truth differ in size");
  }
  const std::size_t k = num_classes();
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const std::size_t p = pred.labels[i], g = gt.labels[i];
    if (p >= k || g >= k) throw ContractError("label out of range");
    if (p == g) {
      ++intersection_[p];
      ++union_[p];
    } else {
      ++union_[p];
      ++union_[g];
      ++fp_[p];
      ++fn_[g];
      if (p != 0) ++fg_fp_;
      if (g != 0) ++fg_fn_;
    }
  }
  total_ += pred.labels.size();
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.num_classes() != num_classes()) {
    throw DimensionError("cannot merge accumulators with different class counts");
  }
  for (std::size_t k = 0; k < num_classes(); ++k) {
    intersection_[k] += other.intersection_[k];
    union_[k] += other.union_[k];
    fp_[k] += other.fp_[k];
    fn_[k] += other.fn_[k];
  }
  total_ += other.total_;
  fg_fp_ += other.fg_fp_;
  fg_fn_ += other.fg_fn_;
}

MiouResult miou(const ConfusionAccumulator& acc) {
  MiouResult r;
  r.per_class.resize(acc.num_classes());
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < acc.num_classes(); ++k) {
    if (acc.union_count(k) == 0) continue;
    const double iou = static_cast<double>(acc.intersection(k)) /
                       static_cast<double>(acc.union_count(k));
    r.per_class[k] = iou;
    sum += iou;
    ++counted;
  }
  if (counted > 0) r.mean = sum / static_cast<double>(counted);
  return r;
}

MiouResult miou(std::span<const LabelMask> pred, std::span<const LabelMask> gt,
                std::size_t num_classes) {
  if (pred.size() != gt.size()) throw DimensionError("prediction/ground truth count mismatch");
  ConfusionAccumulator acc(num_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], gt[i]);
  return miou(acc);
}

FpFn fp_fn_rates(const ConfusionAccumulator& acc) {
  if (acc.total_pixels() == 0) return {};
  const double total = static_cast<double>(acc.total_pixels());
  return {static_cast<double>(acc.foreground_fp()) / total,
          static_cast<double>(acc.foreground_fn()) / total};
}

FpFn fp_fn_rates(std::span<const LabelMask> pred, std::span<const LabelMask> gt) {
  if (pred.size() != gt.size()) throw DimensionError("prediction/ground truth count mismatch");
  std::size_t k = 1;
  for (const auto& m : pred)
    for (auto v : m.labels) k = std::max<std::size_t>(k, v + 1u);
  for (const auto& m : gt)
    for (auto v : m.labels) k = std::max<std::size_t>(k, v + 1u);
  ConfusionAccumulator acc(k);
  for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], gt[i]);
  return fp_fn_rates(acc);
}

FpFn fp_fn_rates(const LabelMask& pred, const LabelMask& gt) {
  return fp_fn_rates(std::span<const LabelMask>(&pred, 1), std::span<const LabelMask>(&gt, 1));
}

std::vector<double> threshold_grid(double step) {
  if (!(step > 0.0) || step >= 1.0) throw ContractError("threshold step must be in (0, 1)");
  std::vector<double> grid;
  for (int i = 1;; ++i) {
    const double t = std::round(i * step * 1e9) / 1e9;
    if (t >= 1.0) break;
    grid.push_back(t);
  }
  return grid;
}

ThresholdSweep best_threshold_miou(std::span<const std::vector<LocalizationMap>> maps,
                                   std::span<const LabelMask> gt, std::size_t num_classes,
                                   std::span<const double> thresholds) {
  if (maps.size() != gt.size()) throw DimensionError("maps/ground truth count mismatch");
  if (thresholds.empty()) throw ContractError("empty threshold grid");
  ThresholdSweep sweep;
  sweep.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double theta : thresholds) {
    ConfusionAccumulator acc(num_classes);
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const auto seed = seed_from_maps(maps[i], theta, gt[i].height, gt[i].width);
      acc.add(seed.mask, gt[i]);
    }
    const auto m = miou(acc).mean;
    sweep.miou_curve.push_back(m);
    if (!m) continue;
    const bool better = !sweep.best_miou || *m > *sweep.best_miou ||
                        (*m == *sweep.best_miou && theta < sweep.best_threshold);
    if (better) {
      sweep.best_miou = m;
      sweep.best_threshold = theta;
      sweep.best_fp_fn = fp_fn_rates(acc);
    }
  }
  return sweep;
}

ThresholdSweep best_threshold_miou(std::span<const std::vector<LocalizationMap>> maps,
                                   std::span<const LabelMask> gt, std::size_t num_classes) {
  const auto grid = threshold_grid();
  return best_threshold_miou(maps, gt, num_classes, grid);
}

namespace {
nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
}  // namespace

nlohmann::json to_json(const MiouResult& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : r.per_class) per.push_back(opt(v));
  return {{"per_class_iou", per}, {"miou", opt(r.mean)}};
}

nlohmann::json to_json(const ThresholdSweep& s) {
  nlohmann::json curve = nlohmann::json::array();
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    curve.push_back({{"threshold", s.thresholds[i]}, {"miou", opt(s.miou_curve[i])}});
  }
  return {{"best_threshold", s.best_threshold},
          {"best_miou", opt(s.best_miou)},
          {"fp", s.best_fp_fn.fp},
          {"fn", s.best_fp_fn.fn},
          {"fp_fn_definition",
           "fraction of all pixels: fp = foreground predicted with a wrong label, "
           "fn = ground-truth foreground not predicted with its label"},
          {"curve", curve}};
}

}  // namespace acr
