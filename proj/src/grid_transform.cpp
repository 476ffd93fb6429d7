#include "acr/grid_transform.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "acr/error.hpp"

namespace acr {

// ---------------------------------------------------------------------------
// GridShape / SpatialTransform

void GridShape::validate() const {
  if (h == 0 || w == 0) {
    throw DimensionError("grid extents must be positive, got " + str());
  }
}

std::string GridShape::str() const {
  return std::to_string(h) + "x" + std::to_string(w);
}

GridShape GridShape::parse(std::string_view text) {
  const auto x = text.find_first_of("xX");
  GridShape g{0, 0};
  if (x == std::string_view::npos) throw ContractError("grid must be HxW: " + std::string(text));
  auto parse_part = [&](std::string_view part, std::size_t& out) {
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (ec != std::errc() || p != part.data() + part.size()) {
      throw ContractError("grid must be HxW: " + std::string(text));
    }
  };
  parse_part(text.substr(0, x), g.h);
  parse_part(text.substr(x + 1), g.w);
  g.validate();
  return g;
}

SpatialTransform SpatialTransform::of(TransformKind kind) {
  if (kind == TransformKind::Resize) {
    throw ContractError("Resize needs a target grid; use SpatialTransform::resize");
  }
  return {kind, std::nullopt};
}

SpatialTransform SpatialTransform::resize(GridShape target) {
  target.validate();
  return {TransformKind::Resize, target};
}

void SpatialTransform::validate() const {
  if ((kind == TransformKind::Resize) != resize_target.has_value()) {
    throw ContractError("resize_target must be present iff kind is Resize");
  }
  if (resize_target) resize_target->validate();
}

std::string SpatialTransform::name() const {
  switch (kind) {
    case TransformKind::Identity: return "identity";
    case TransformKind::FlipH: return "flip_h";
    case TransformKind::FlipV: return "flip_v";
    case TransformKind::FlipHV: return "flip_hv";
    case TransformKind::Rot90: return "rot90";
    case TransformKind::Rot180: return "rot180";
    case TransformKind::Rot270: return "rot270";
    case TransformKind::Resize:
      return "resize:" + (resize_target ? resize_target->str() : std::string("?"));
  }
  return "unknown";
}

SpatialTransform SpatialTransform::parse(std::string_view text) {
  if (text.starts_with("resize:")) return resize(GridShape::parse(text.substr(7)));
  for (const auto& t : permutation_transforms()) {
    if (t.name() == text) return t;
  }
  throw ContractError("unknown transform '" + std::string(text) + "'");
}

const std::vector<SpatialTransform>& permutation_transforms() {
  static const std::vector<SpatialTransform> all = {
      SpatialTransform::of(TransformKind::Identity), SpatialTransform::of(TransformKind::FlipH),
      SpatialTransform::of(TransformKind::FlipV),    SpatialTransform::of(TransformKind::FlipHV),
      SpatialTransform::of(TransformKind::Rot90),    SpatialTransform::of(TransformKind::Rot180),
      SpatialTransform::of(TransformKind::Rot270)};
  return all;
}

GridShape transformed_grid(const SpatialTransform& t, const GridShape& g) {
  t.validate();
  switch (t.kind) {
    case TransformKind::Rot90:
    case TransformKind::Rot270: return {g.w, g.h};
    case TransformKind::Resize: return *t.resize_target;
    default: return g;
  }
}

SpatialTransform inverse_transform(const SpatialTransform& t, const GridShape& g) {
  switch (t.kind) {
    case TransformKind::Rot90: return SpatialTransform::of(TransformKind::Rot270);
    case TransformKind::Rot270: return SpatialTransform::of(TransformKind::Rot90);
    case TransformKind::Resize: return SpatialTransform::resize(g);
    default: return t;
  }
}

// ---------------------------------------------------------------------------
// TokenPermutation

std::vector<std::size_t> TokenPermutation::inverse() const {
  std::vector<std::size_t> inv(sigma.size());
  for (std::size_t j = 0; j < sigma.size(); ++j) inv[sigma[j]] = j;
  return inv;
}

bool TokenPermutation::is_identity() const {
  for (std::size_t j = 0; j < sigma.size(); ++j)
    if (sigma[j] != j) return false;
  return source_grid == target_grid;
}

bool TokenPermutation::is_bijection() const {
  std::vector<bool> seen(sigma.size(), false);
  for (auto s : sigma) {
    if (s >= sigma.size() || seen[s]) return false;
    seen[s] = true;
  }
  return true;
}

TokenPermutation TokenPermutation::compose(const TokenPermutation& first,
                                           const TokenPermutation& second) {
  if (!(second.source_grid == first.target_grid)) {
    throw DimensionError("cannot compose permutations: grid " +
                         first.target_grid.str() + " then " +
                         second.source_grid.str());
  }
  TokenPermutation out{first.source_grid, second.target_grid, {}};
  out.sigma.resize(second.sigma.size());
  for (std::size_t j = 0; j < out.sigma.size(); ++j) {
    out.sigma[j] = first.sigma[second.sigma[j]];
  }
  return out;
}

TokenPermutation token_permutation(const SpatialTransform& t, const GridShape& g) {
  t.validate();
  g.validate();
  if (!t.is_permutation()) {
    throw UnsupportedTransformError("resize has no token permutation");
  }
  const GridShape tg = transformed_grid(t, g);
  TokenPermutation p{g, tg, std::vector<std::size_t>(g.n())};
  for (std::size_t i = 0; i < tg.h; ++i) {
    for (std::size_t j = 0; j < tg.w; ++j) {
      std::size_t si = i, sj = j;  // source patch for target (i, j)
      switch (t.kind) {
        case TransformKind::Identity: break;
        case TransformKind::FlipH: sj = g.w - 1 - j; break;
        case TransformKind::FlipV: si = g.h - 1 - i; break;
        case TransformKind::FlipHV:
        case TransformKind::Rot180:
          si = g.h - 1 - i;
          sj = g.w - 1 - j;
          break;
        case TransformKind::Rot90:
          si = j;
          sj = g.w - 1 - i;
          break;
        case TransformKind::Rot270:
          si = g.h - 1 - j;
          sj = i;
          break;
        case TransformKind::Resize: break;
      }
      p.sigma[i * tg.w + j] = si * g.w + sj;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Fast inversion

namespace {

std::vector<std::size_t> attention_gather_index(const SpatialTransform& t,
                                                const GridShape& g,
                                                std::size_t size) {
  if (size != g.n() + 1) {
    throw DimensionError("attention of size " + std::to_string(size) +
                         " does not match grid " + g.str() + " (+ class token)");
  }
  const auto inv = token_permutation(t, g).inverse();
  std::vector<std::size_t> idx(size);
  idx[0] = 0;
  for (std::size_t u = 0; u < inv.size(); ++u) idx[u + 1] = inv[u] + 1;
  return idx;
}

void require_square(const Tensor& a, const char* what) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError(std::string(what) + " expects a square matrix, got " +
                         shape_str(a.shape()));
  }
}

}  // namespace

Tensor invert_attention_fast(const Tensor& a_prime, const SpatialTransform& t,
                             const GridShape& g) {
  require_square(a_prime, "invert_attention_fast");
  const std::size_t m = a_prime.dim(0);
  const auto idx = attention_gather_index(t, g, m);
  Tensor out({m, m});
  for (std::size_t u = 0; u < m; ++u)
    for (std::size_t v = 0; v < m; ++v) out.at(u, v) = a_prime.at(idx[u], idx[v]);
  return out;
}

Var invert_attention_fast(Var a_prime, const SpatialTransform& t, const GridShape& g) {
  require_square(a_prime.value(), "invert_attention_fast");
  auto idx = attention_gather_index(t, g, a_prime.value().dim(0));
  if (t.kind == TransformKind::Identity) return a_prime;
  return gather(a_prime, idx, idx);
}

Var invert_attention(Var a_prime, const SpatialTransform& t, const GridShape& g) {
  t.validate();
  if (t.kind == TransformKind::Resize) {
    return resize_attention(a_prime, *t.resize_target, g);
  }
  return invert_attention_fast(a_prime, t, g);
}

// ---------------------------------------------------------------------------
// Dense algebra

namespace dense {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("dense::matmul shape mismatch " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  Tensor out({m, p});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) out[i * p + j] += av * b[kk * p + j];
    }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("dense::transpose expects a matrix");
  Tensor out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor reversal(std::size_t n) {
  Tensor j({n, n});
  for (std::size_t i = 0; i < n; ++i) j.at(i, n - 1 - i) = 1.0;
  return j;
}

Tensor kronecker(const Tensor& a, const Tensor& b) {
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(0), s = b.dim(1);
  Tensor out({p * r, q * s});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j)
      for (std::size_t k = 0; k < r; ++k)
        for (std::size_t l = 0; l < s; ++l)
          out.at(i * r + k, j * s + l) = a.at(i, j) * b.at(k, l);
  return out;
}

Tensor commutation(std::size_t l, std::size_t m) {
  // vec(H) holds h_ab at b*l + a; vec(H^T) holds it at a*m + b.
  Tensor c({l * m, l * m});
  for (std::size_t a = 0; a < l; ++a)
    for (std::size_t b = 0; b < m; ++b) c.at(a * m + b, b * l + a) = 1.0;
  return c;
}

Tensor vec(const Tensor& h) {
  const std::size_t l = h.dim(0), m = h.dim(1);
  Tensor v({l * m, 1});
  for (std::size_t b = 0; b < m; ++b)
    for (std::size_t a = 0; a < l; ++a) v[b * l + a] = h.at(a, b);
  return v;
}

KroneckerFactors kronecker_factors(const SpatialTransform& t, const GridShape& g) {
  t.validate();
  g.validate();
  const std::size_t h = g.h, w = g.w;
  switch (t.kind) {
    case TransformKind::Identity:
      return {Tensor::identity(h), Tensor::identity(w), Tensor::identity(g.n())};
    case TransformKind::FlipH:
      return {Tensor::identity(h), reversal(w), Tensor::identity(g.n())};
    case TransformKind::FlipV:
      return {reversal(h), Tensor::identity(w), Tensor::identity(g.n())};
    case TransformKind::FlipHV:
    case TransformKind::Rot180:
      return {reversal(h), reversal(w), Tensor::identity(g.n())};
    case TransformKind::Rot90:  // X' = J_w X^T
      return {reversal(w), Tensor::identity(h), commutation(h, w)};
    case TransformKind::Rot270:  // X' = X^T J_h
      return {Tensor::identity(w), reversal(h), commutation(h, w)};
    case TransformKind::Resize:
      break;
  }
  throw UnsupportedTransformError("resize is not a permutation");
}

Tensor bilinear_matrix(std::size_t out, std::size_t in) {
  if (out == 0 || in == 0) throw DimensionError("bilinear_matrix: zero extent");
  Tensor r({out, in});
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double x = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(in - 1));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t x1 = std::min(x0 + 1, in - 1);
    const double f = x - static_cast<double>(x0);
    r.at(i, x0) += 1.0 - f;
    r.at(i, x1) += f;
  }
  return r;
}

}  // namespace dense

Tensor invert_attention_kronecker(const Tensor& a_prime_patch,
                                  const SpatialTransform& t, const GridShape& g,
                                  std::size_t max_tokens) {
  require_square(a_prime_patch, "invert_attention_kronecker");
  if (!t.is_permutation()) {
    throw UnsupportedTransformError("Kronecker inversion supports flips and rotations only");
  }
  g.validate();
  if (a_prime_patch.dim(0) != g.n()) {
    throw DimensionError("patch block " + shape_str(a_prime_patch.shape()) +
                         " does not match grid " + g.str());
  }
  if (g.n() > max_tokens) {
    throw ResourceError("dense Kronecker oracle limited to " +
                        std::to_string(max_tokens) + " tokens, grid has " +
                        std::to_string(g.n()));
  }
  using namespace dense;
  const GridShape view = transformed_grid(t, g);
  const auto f = kronecker_factors(t, g);
  // Row-major tokens of an r x c grid are vec(X^T); C_{c,r} maps them to vec(X).
  const Tensor to_colmajor_view = commutation(view.w, view.h);
  const Tensor to_colmajor_src = commutation(g.w, g.h);

  const Tensor a_cm = matmul(matmul(to_colmajor_view, a_prime_patch),
                             transpose(to_colmajor_view));
  const Tensor m = kronecker(f.p_w, transpose(f.p_h));  // P_w (x) P_h^T
  const Tensor ct = transpose(f.c);
  const Tensor left = matmul(ct, m);
  const Tensor right = matmul(transpose(m), f.c);
  const Tensor inv_cm = matmul(matmul(left, a_cm), right);
  return matmul(matmul(transpose(to_colmajor_src), inv_cm), to_colmajor_src);
}

// ---------------------------------------------------------------------------
// Resize

namespace {

// blockdiag(1, R_h (x) R_w): (n+1) x (n'+1).
Tensor attention_resize_matrix(const GridShape& source, const GridShape& target) {
  const Tensor r = dense::kronecker(dense::bilinear_matrix(target.h, source.h),
                                    dense::bilinear_matrix(target.w, source.w));
  Tensor full({target.n() + 1, source.n() + 1});
  full.at(0, 0) = 1.0;
  for (std::size_t i = 0; i < target.n(); ++i)
    for (std::size_t j = 0; j < source.n(); ++j) full.at(i + 1, j + 1) = r.at(i, j);
  return full;
}

void check_resize_args(const Tensor& a, const GridShape& source, const GridShape& target) {
  source.validate();
  target.validate();
  require_square(a, "resize_attention");
  if (a.dim(0) != source.n() + 1) {
    throw DimensionError("attention " + shape_str(a.shape()) +
                         " does not match source grid " + source.str());
  }
}

}  // namespace

Var resize_attention(Var a_prime, const GridShape& source, const GridShape& target) {
  check_resize_args(a_prime.value(), source, target);
  if (source == target) return a_prime;
  Tape& tape = a_prime.tape();
  const Tensor r = attention_resize_matrix(source, target);
  Var rv = tape.constant(r);
  Var rt = tape.constant(dense::transpose(r));
  Var raw = matmul(matmul(rv, a_prime), rt);
  Var targets = matmul(rv, row_sums(a_prime));
  return scale_rows_to(raw, targets);
}

Tensor resize_attention(const Tensor& a_prime, const GridShape& source,
                        const GridShape& target) {
  check_resize_args(a_prime, source, target);
  if (source == target) return a_prime;
  Tape tape;
  return resize_attention(tape.constant(a_prime), source, target).value();
}

}  // namespace acr
