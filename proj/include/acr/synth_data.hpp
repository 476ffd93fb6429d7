#pragma once

// Deterministic multi-label shapes dataset with pixel ground truth.
//
// Each image holds 1-3 shapes of distinct classes on a low-contrast noisy
// background. Class k has its own outline (disk, square, triangle, ring,
// cross, ...) and colour/texture family. Later shapes may overlap earlier
// ones, but every shape keeps at least 30% of its area visible.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "acr/grid_transform.hpp"
#include "acr/mask.hpp"
#include "acr/tensor.hpp"

namespace acr {

inline constexpr std::size_t kMaxShapeClasses = 6;

struct SynthConfig {
  std::size_t num_samples = 100;
  std::size_t num_classes = 5;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

const std::vector<std::string>& shape_class_names();

struct SyntheticSample {
  Tensor image;                    // 3 x H x W, values k / 255
  std::vector<std::uint8_t> labels;  // multi-hot over classes
  LabelMask mask;                  // 0 background, k + 1 for class k
  std::uint64_t seed = 0;

  Tensor targets() const;  // labels as a 1 x K float tensor
  std::vector<std::size_t> present_classes() const;
};

struct Dataset {
  SynthConfig config;
  std::vector<SyntheticSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// Sample `index` of the dataset defined by `config`; depends only on
/// (config, index).
SyntheticSample generate_sample(const SynthConfig& config, std::size_t index);
Dataset generate(const SynthConfig& config);

/// Pixel-exact for flips/rotations, bilinear for Resize (the target is a
/// patch grid, so the caller supplies the patch size).
Tensor augment(const Tensor& image, const SpatialTransform& t, std::size_t patch_size = 4);
/// Nearest-neighbour for Resize.
LabelMask augment(const LabelMask& mask, const SpatialTransform& t,
                  std::size_t patch_size = 4);

struct AugmentedPair {
  Tensor view_a;
  Tensor view_b;
  SpatialTransform transform;
};

AugmentedPair make_pair(const Tensor& image, const SpatialTransform& t,
                        std::size_t patch_size = 4);

// Directory layout:
//   meta.json           generation config and class names
//   index.jsonl         {"id", "image", "mask", "labels", "seed"} per sample
//   images/NNNNNN.ppm   masks/NNNNNN.pgm
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace acr
