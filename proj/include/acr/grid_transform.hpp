#pragma once

// Spatial augmentations expressed on the patch grid, and their inversion on
// attention matrices.
//
// Token order is row-major: patch (row, col) of an h x w grid is token
// row * w + col (attention index 1 + that, after the class token). The dense
// Kronecker oracle works in column-major vec order and converts at the
// boundary with an explicit permutation matrix.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acr/autodiff.hpp"
#include "acr/tensor.hpp"

namespace acr {

struct GridShape {
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t n() const { return h * w; }
  void validate() const;
  std::string str() const;
  static GridShape parse(std::string_view text);  // "HxW"

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

enum class TransformKind {
  Identity,
  FlipH,
  FlipV,
  FlipHV,
  Rot90,
  Rot180,
  Rot270,
  Resize,
};

/// An image augmentation. Rotations are counter-clockwise.
struct SpatialTransform {
  TransformKind kind = TransformKind::Identity;
  std::optional<GridShape> resize_target;  // present iff kind == Resize

  static SpatialTransform identity() { return {}; }
  static SpatialTransform of(TransformKind kind);
  static SpatialTransform resize(GridShape target);

  /// Names: identity, flip_h, flip_v, flip_hv, rot90, rot180, rot270,
  /// resize:HxW.
  static SpatialTransform parse(std::string_view text);
  std::string name() const;

  bool is_permutation() const { return kind != TransformKind::Resize; }
  void validate() const;

  friend bool operator==(const SpatialTransform&, const SpatialTransform&) = default;
};

/// Grid of the transformed view.
GridShape transformed_grid(const SpatialTransform& t, const GridShape& g);

/// Transform undoing `t` on a view of grid `g` (Resize maps back to `g`).
SpatialTransform inverse_transform(const SpatialTransform& t, const GridShape& g);

/// Every permutation-expressible kind, in declaration order.
const std::vector<SpatialTransform>& permutation_transforms();

/// Bijection between token orders. sigma[j] is the source token that lands at
/// target token j ("gather from source").
struct TokenPermutation {
  GridShape source_grid;
  GridShape target_grid;
  std::vector<std::size_t> sigma;

  std::vector<std::size_t> inverse() const;
  bool is_identity() const;
  bool is_bijection() const;

  /// Apply `first`, then `second` (whose source is first's target).
  static TokenPermutation compose(const TokenPermutation& first,
                                  const TokenPermutation& second);

  friend bool operator==(const TokenPermutation&, const TokenPermutation&) = default;
};

/// Throws UnsupportedTransformError for Resize.
TokenPermutation token_permutation(const SpatialTransform& t, const GridShape& g);

/// Restores the original token order of an (n+1)x(n+1) attention matrix
/// computed on the view produced by `t` from an image on grid `g`.
Tensor invert_attention_fast(const Tensor& a_prime, const SpatialTransform& t,
                             const GridShape& g);
/// Differentiable version (a pure gather).
Var invert_attention_fast(Var a_prime, const SpatialTransform& t,
                          const GridShape& g);

/// Undo any supported transform: permutation kinds use the fast gather,
/// Resize uses resize_attention from t.resize_target back to g.
Var invert_attention(Var a_prime, const SpatialTransform& t, const GridShape& g);

inline constexpr std::size_t kKroneckerOracleCap = 1024;

/// Dense oracle: C^T (P_w (x) P_h^T) A' (P_w (x) P_h^T)^T C on the n x n patch
/// block, with every factor materialized.
Tensor invert_attention_kronecker(const Tensor& a_prime_patch,
                                  const SpatialTransform& t, const GridShape& g,
                                  std::size_t max_tokens = kKroneckerOracleCap);

/// Bilinear resize of an attention matrix from `source` to `target` grid,
/// preserving row sums (interpolated from the source row sums).
Tensor resize_attention(const Tensor& a_prime, const GridShape& source,
                        const GridShape& target);
Var resize_attention(Var a_prime, const GridShape& source, const GridShape& target);

namespace dense {

/// Factors of the matrix form X' = P_h X P_w (flip) or P_h X^T P_w (rotation).
struct KroneckerFactors {
  Tensor p_h;  // rows-of-view square permutation
  Tensor p_w;  // cols-of-view square permutation
  Tensor c;    // commutation matrix, or identity for flips
};

KroneckerFactors kronecker_factors(const SpatialTransform& t, const GridShape& g);

/// Anti-diagonal (reversal) permutation matrix.
Tensor reversal(std::size_t n);
Tensor kronecker(const Tensor& a, const Tensor& b);
/// C_{lm} with C vec(H) = vec(H^T) for H of shape l x m.
Tensor commutation(std::size_t l, std::size_t m);
/// Column-major vec as an (lm x 1) matrix.
Tensor vec(const Tensor& h);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// 1-D bilinear interpolation weights (out x in), half-pixel centers.
Tensor bilinear_matrix(std::size_t out, std::size_t in);

}  // namespace dense

}  // namespace acr
