#include "acr/localization.hpp"

#include <algorithm>

#include "acr/error.hpp"
#include "acr/metrics.hpp"

namespace acr {

double LocalizationMap::max() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

void clamp_normalize(std::vector<double>& values) {
  double mx = 0.0;
  for (double& v : values) {
    if (!(v > 0.0)) v = 0.0;
    mx = std::max(mx, v);
  }
  if (mx > 0.0) {
    for (double& v : values) v /= mx;
  }
}

namespace {

void check_layer_stack(std::span<const Tensor> stack, const LayerRange& layers,
                       std::size_t n, const char* what) {
  if (layers.first > layers.last) throw ContractError("empty layer range");
  if (stack.empty()) throw ContractError(std::string(what) + ": no layers supplied");
  layers.validate(stack.size());
  for (std::size_t i = layers.first; i <= layers.last; ++i) {
    const Tensor& t = stack[i];
    if (t.rank() != 2 || t.dim(0) != n + 1 || t.dim(1) != n + 1) {
      throw DimensionError(std::string(what) + ": layer " + std::to_string(i) +
                           " has shape " + shape_str(t.shape()) + ", expected " +
                           std::to_string(n + 1) + "x" + std::to_string(n + 1));
    }
  }
}

}  // namespace

LocalizationMap grad_localization(std::span<const Tensor> adjoints,
                                  const LayerRange& layers, const GridShape& grid,
                                  std::size_t class_index) {
  grid.validate();
  const std::size_t n = grid.n();
  check_layer_stack(adjoints, layers, n, "grad_localization");
  LocalizationMap map{class_index, grid.h, grid.w, std::vector<double>(n, 0.0), layers,
                      false};
  for (std::size_t i = layers.first; i <= layers.last; ++i) {
    const Tensor& g = adjoints[i];
    for (std::size_t j = 0; j < n; ++j) map.values[j] += g.at(0, j + 1);
  }
  const double inv = 1.0 / static_cast<double>(layers.size());
  for (double& v : map.values) v *= inv;
  clamp_normalize(map.values);
  return map;
}

LocalizationMap affinity_refine(const LocalizationMap& map, const Tensor& affinity) {
  if (map.refined) throw ContractError("localization map is already refined");
  const std::size_t n = map.values.size();
  if (affinity.rank() != 2 || affinity.dim(0) != n || affinity.dim(1) != n) {
    throw DimensionError("affinity " + shape_str(affinity.shape()) +
                         " does not match map of " + std::to_string(n) + " patches");
  }
  LocalizationMap out = map;
  out.refined = true;
  std::vector<double> m = map.values;
  for (double& v : m) v = std::max(v, 0.0);
  std::fill(out.values.begin(), out.values.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (m[i] == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) out.values[j] += m[i] * affinity.at(i, j);
  }
  clamp_normalize(out.values);
  return out;
}

LocalizationMap affinity_refine(const LocalizationMap& map,
                                std::span<const Tensor> attentions,
                                const LayerRange& layers) {
  if (map.refined) throw ContractError("localization map is already refined");
  const std::size_t n = map.values.size();
  check_layer_stack(attentions, layers, n, "affinity_refine");
  Tensor affinity({n, n});
  for (std::size_t l = layers.first; l <= layers.last; ++l) {
    const Tensor& a = attentions[l];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) affinity.at(i, j) += a.at(i + 1, j + 1);
  }
  const double inv = 1.0 / static_cast<double>(layers.size());
  for (double& v : affinity.values()) v *= inv;
  return affinity_refine(map, affinity);
}

LocalizationMap upsample(const LocalizationMap& map, std::size_t height,
                         std::size_t width) {
  if (height == map.height && width == map.width) return map;
  const Tensor rh = dense::bilinear_matrix(height, map.height);
  const Tensor rw = dense::bilinear_matrix(width, map.width);
  LocalizationMap out = map;
  out.height = height;
  out.width = width;
  // rows first: tmp = Rh * M  (height x map.width)
  std::vector<double> tmp(height * map.width, 0.0);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t k = 0; k < map.height; ++k) {
      const double w = rh.at(i, k);
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < map.width; ++j) tmp[i * map.width + j] += w * map.at(k, j);
    }
  out.values.assign(height * width, 0.0);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < map.width; ++k) s += tmp[i * map.width + k] * rw.at(j, k);
      out.values[i * width + j] = s;
    }
  clamp_normalize(out.values);
  return out;
}

SeedMask seed_from_maps(std::span<const LocalizationMap> maps, double threshold,
                        std::size_t height, std::size_t width) {
  std::vector<const LocalizationMap*> order;
  for (const auto& m : maps) {
    if (m.height != height || m.width != width || m.values.size() != height * width) {
      throw DimensionError("seed_from_maps: map size mismatch");
    }
    order.push_back(&m);
  }
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return a->class_index < b->class_index;
  });
  SeedMask seed{LabelMask(height, width, 0), threshold};
  for (std::size_t p = 0; p < height * width; ++p) {
    const LocalizationMap* best = nullptr;
    for (const auto* m : order) {
      if (!best || m->values[p] > best->values[p]) best = m;
    }
    if (best && best->values[p] >= threshold) {
      seed.mask.labels[p] = static_cast<std::uint16_t>(best->class_index + 1);
    }
  }
  return seed;
}

SeedMask seed_from_maps(std::span<const LocalizationMap> maps, double threshold) {
  if (maps.empty()) throw ContractError("seed_from_maps: no maps and no size given");
  return seed_from_maps(maps, threshold, maps.front().height, maps.front().width);
}

std::vector<LocalizationMap> localize(const ImageEvidence& evidence,
                                      const LayerRange& layers, bool refined,
                                      std::size_t height, std::size_t width) {
  if (evidence.adjoints.size() != evidence.classes.size()) {
    throw ContractError("localize: one adjoint stack per class required");
  }
  std::vector<LocalizationMap> maps;
  maps.reserve(evidence.classes.size());
  for (std::size_t k = 0; k < evidence.classes.size(); ++k) {
    LocalizationMap m = grad_localization(evidence.adjoints[k], layers, evidence.grid,
                                          evidence.classes[k]);
    if (refined) m = affinity_refine(m, evidence.attentions, layers);
    maps.push_back(upsample(m, height, width));
  }
  return maps;
}

std::vector<LayerSweepRow> layer_sweep(std::span<const ImageEvidence> evidence,
                                       std::span<const LabelMask> ground_truth,
                                       std::span<const std::size_t> start_layers,
                                       bool refined, std::size_t num_classes) {
  if (evidence.size() != ground_truth.size()) {
    throw DimensionError("layer_sweep: evidence/ground truth count mismatch");
  }
  std::vector<LayerSweepRow> rows;
  for (std::size_t start : start_layers) {
    std::vector<std::vector<LocalizationMap>> maps;
    maps.reserve(evidence.size());
    for (std::size_t i = 0; i < evidence.size(); ++i) {
      const std::size_t depth = evidence[i].attentions.size();
      if (start >= depth) throw ContractError("layer_sweep: start layer beyond depth");
      maps.push_back(localize(evidence[i], {start, depth - 1}, refined,
                              ground_truth[i].height, ground_truth[i].width));
    }
    const auto sweep = best_threshold_miou(maps, ground_truth, num_classes);
    rows.push_back({start, sweep.best_threshold, sweep.best_miou.value_or(0.0),
                    sweep.best_fp_fn.fp, sweep.best_fp_fn.fn});
  }
  return rows;
}

}  // namespace acr
