#pragma once

// Class localization maps from attention gradients.
//
//   M^c = relu( mean_{i in layers} dy_c/dA_i [0, 1:] ), reshaped h x w, max-normalized
//   refined M^c = normalize( relu(M^c_raw) * mean_{i in layers} A_i[1:, 1:] )

#include <cstddef>
#include <span>
#include <vector>

#include "acr/grid_transform.hpp"
#include "acr/layer_range.hpp"
#include "acr/mask.hpp"
#include "acr/tensor.hpp"

namespace acr {

struct LocalizationMap {
  std::size_t class_index = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major, in [0, 1]
  LayerRange layers_fused;
  bool refined = false;

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  double max() const;
};

/// Fuses the class-to-patch gradients of the selected layers.
/// `adjoints` holds one (n+1) x (n+1) gradient per layer.
LocalizationMap grad_localization(std::span<const Tensor> adjoints,
                                  const LayerRange& layers, const GridShape& grid,
                                  std::size_t class_index = 0);

/// Propagates the map through the layer-averaged patch-to-patch attention.
/// Throws ContractError when the map is already refined.
LocalizationMap affinity_refine(const LocalizationMap& map,
                                std::span<const Tensor> attentions,
                                const LayerRange& layers);

/// Same, with an explicit n x n affinity matrix.
LocalizationMap affinity_refine(const LocalizationMap& map, const Tensor& affinity);

/// Clamps negatives to zero and divides by the maximum (all-zero stays zero).
void clamp_normalize(std::vector<double>& values);

/// Bilinear upsampling to image resolution, re-normalized to max 1.
LocalizationMap upsample(const LocalizationMap& map, std::size_t height,
                         std::size_t width);

struct SeedMask {
  LabelMask mask;
  double threshold = 0.0;
};

/// Background where every class map is below `threshold`, else the argmax
/// class (label class_index + 1); ties go to the lower class index.
SeedMask seed_from_maps(std::span<const LocalizationMap> maps, double threshold,
                        std::size_t height, std::size_t width);
SeedMask seed_from_maps(std::span<const LocalizationMap> maps, double threshold);

/// Inputs for one image: gradients per present class and attention per layer.
struct ImageEvidence {
  GridShape grid;
  std::vector<std::size_t> classes;
  std::vector<std::vector<Tensor>> adjoints;  // [class][layer]
  std::vector<Tensor> attentions;             // [layer]
};

/// Pixel-resolution maps for every present class of one image.
std::vector<LocalizationMap> localize(const ImageEvidence& evidence,
                                      const LayerRange& layers, bool refined,
                                      std::size_t height, std::size_t width);

struct LayerSweepRow {
  std::size_t start_layer = 0;
  double threshold = 0.0;
  double miou = 0.0;
  double fp = 0.0;
  double fn = 0.0;
};

/// For each start layer s, fuses layers [s .. last] and reports the best
/// threshold mIoU with FP/FN at that threshold.
std::vector<LayerSweepRow> layer_sweep(std::span<const ImageEvidence> evidence,
                                       std::span<const LabelMask> ground_truth,
                                       std::span<const std::size_t> start_layers,
                                       bool refined, std::size_t num_classes);

}  // namespace acr
