#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "acr/autodiff.hpp"
#include "acr/grid_transform.hpp"
#include "acr/rng.hpp"
#include "acr/tensor.hpp"

namespace acr {

struct ViTConfig {
  std::size_t patch_size = 4;
  GridShape grid{8, 8};
  std::size_t channels = 3;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 4;
  std::size_t num_heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t num_classes = 5;
  bool use_positional_embedding = true;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t image_height() const { return grid.h * patch_size; }
  std::size_t image_width() const { return grid.w * patch_size; }
  void validate() const;

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

/// Ordered, named parameter tensors. Copying yields an independent snapshot
/// that can be shared read-only across threads.
class Parameters {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor& add(std::string name, Tensor t);
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t count() const;  // scalar parameter count

  void zero_grad();

  friend bool operator==(const Parameters& a, const Parameters& b);

 private:
  std::vector<Entry> entries_;
};

/// Xavier-uniform linear weights, zero biases, N(0, 0.02) class token and
/// positional embeddings, unit layer-norm gains.
Parameters init_parameters(const ViTConfig& config, std::uint64_t seed);

struct AttentionRecord {
  std::size_t layer = 0;
  Var matrix;              // head-averaged, post-softmax, (n+1) x (n+1)
  std::vector<Var> heads;  // per-head post-softmax matrices

  const Tensor& value() const { return matrix.value(); }
};

struct ForwardResult {
  Var logits;  // 1 x num_classes
  std::vector<AttentionRecord> attentions;
  GridShape grid;

  Tape& tape() const { return logits.tape(); }
};

/// Runs the model on one C x H x W image. Parameters become tape parameters
/// and receive gradients on backward.
///
/// When the image grid differs from config.grid the positional embeddings are
/// bilinearly resampled to the image grid.
ForwardResult forward(Tape& tape, const Tensor& image, Parameters& params,
                      const ViTConfig& config);

/// Inference variant: parameters enter as constants and the image as a
/// variable, so attention adjoints are still available after backward.
ForwardResult forward(Tape& tape, const Tensor& image, const Parameters& params,
                      const ViTConfig& config);

/// Pre-sigmoid logit of class c as a scalar node.
Var class_score(const ForwardResult& result, std::size_t c);

/// dy_c / dA_i for every layer: the mean over heads of the per-head attention
/// gradients. Requires backward(class_score(c)) to have run.
std::vector<Tensor> attention_adjoints(const ForwardResult& result, std::size_t c);

/// Resets tape gradients, backpropagates y_c and returns attention_adjoints.
std::vector<Tensor> compute_attention_adjoints(const ForwardResult& result,
                                               std::size_t c);

/// C x H x W -> n x (C * p * p), patches in row-major grid order.
Tensor patchify(const Tensor& image, std::size_t patch_size);

// Checkpoint: little-endian binary.
//   magic "ACRCKPT\0" | u32 version | u32 x 10 config fields
//   (patch_size, grid_h, grid_w, channels, embed_dim, num_layers, num_heads,
//    mlp_ratio, num_classes, use_positional_embedding)
//   | u32 tensor count | per tensor: u32 name length, name bytes, u32 rank,
//   u64 extents, f64 payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ViTConfig config;
  Parameters params;
};

void save_checkpoint(const std::filesystem::path& path, const ViTConfig& config,
                     const Parameters& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace acr
