#include "acr/vit.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "acr/error.hpp"

namespace acr {

void ViTConfig::validate() const {
  grid.validate();
  if (patch_size == 0 || channels == 0 || embed_dim == 0 || num_classes == 0 ||
      mlp_ratio == 0) {
    throw ContractError("ViT config extents must be positive");
  }
  if (num_layers < 1) throw ContractError("ViT needs at least one layer");
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw ContractError("embed_dim " + std::to_string(embed_dim) +
                        " not divisible by num_heads " + std::to_string(num_heads));
  }
}

// ---------------------------------------------------------------------------
// Parameters

Tensor& Parameters::add(std::string name, Tensor t) {
  if (contains(name)) throw ContractError("duplicate parameter " + name);
  entries_.push_back({std::move(name), std::move(t)});
  return entries_.back().tensor;
}

Tensor& Parameters::get(std::string_view name) {
  for (auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ContractError("unknown parameter " + std::string(name));
}

const Tensor& Parameters::get(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ContractError("unknown parameter " + std::string(name));
}

bool Parameters::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void Parameters::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

bool operator==(const Parameters& a, const Parameters& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name ||
        !(a.entries_[i].tensor == b.entries_[i].tensor)) {
      return false;
    }
  }
  return true;
}

namespace {

std::string block_prefix(std::size_t layer) {
  return "blocks." + std::to_string(layer) + ".";
}

std::string head_prefix(std::size_t layer, std::size_t head) {
  return block_prefix(layer) + "attn.head" + std::to_string(head) + ".";
}

Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor normal(Rng& rng, Shape shape, double std) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = std * rng.normal();
  return t;
}

}  // namespace

Parameters init_parameters(const ViTConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.embed_dim, dh = config.head_dim();
  const std::size_t dm = d * config.mlp_ratio;
  Parameters p;
  p.add("patch_embed.weight", xavier(rng, config.patch_dim(), d));
  p.add("patch_embed.bias", Tensor({d}));
  p.add("cls_token", normal(rng, {1, d}, 0.02));
  if (config.use_positional_embedding) {
    p.add("pos_embed", normal(rng, {config.grid.n() + 1, d}, 0.02));
  }
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto b = block_prefix(l);
    p.add(b + "norm1.gamma", Tensor({d}, 1.0));
    p.add(b + "norm1.beta", Tensor({d}));
    for (std::size_t h = 0; h < config.num_heads; ++h) {
      const auto hp = head_prefix(l, h);
      p.add(hp + "wq", xavier(rng, d, dh));
      p.add(hp + "bq", Tensor({dh}));
      p.add(hp + "wk", xavier(rng, d, dh));
      p.add(hp + "bk", Tensor({dh}));
      p.add(hp + "wv", xavier(rng, d, dh));
      p.add(hp + "bv", Tensor({dh}));
      p.add(hp + "wo", xavier(rng, dh, d));
    }
    p.add(b + "attn.bo", Tensor({d}));
    p.add(b + "norm2.gamma", Tensor({d}, 1.0));
    p.add(b + "norm2.beta", Tensor({d}));
    p.add(b + "mlp.w1", xavier(rng, d, dm));
    p.add(b + "mlp.b1", Tensor({dm}));
    p.add(b + "mlp.w2", xavier(rng, dm, d));
    p.add(b + "mlp.b2", Tensor({d}));
  }
  p.add("norm.gamma", Tensor({d}, 1.0));
  p.add("norm.beta", Tensor({d}));
  p.add("head.weight", xavier(rng, d, config.num_classes));
  p.add("head.bias", Tensor({config.num_classes}));
  return p;
}

// ---------------------------------------------------------------------------
// Forward

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 3) {
    throw DimensionError("image must be C x H x W, got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), hh = image.dim(1), ww = image.dim(2);
  if (patch_size == 0 || hh % patch_size != 0 || ww % patch_size != 0) {
    throw DimensionError("image " + shape_str(image.shape()) +
                         " not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t gh = hh / patch_size, gw = ww / patch_size;
  const std::size_t pd = c * patch_size * patch_size;
  Tensor out({gh * gw, pd});
  for (std::size_t gi = 0; gi < gh; ++gi)
    for (std::size_t gj = 0; gj < gw; ++gj) {
      double* row = out.data().data() + (gi * gw + gj) * pd;
      std::size_t k = 0;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t py = 0; py < patch_size; ++py)
          for (std::size_t px = 0; px < patch_size; ++px)
            row[k++] = image[(ch * hh + gi * patch_size + py) * ww + gj * patch_size + px];
    }
  return out;
}

namespace {

class Binder {
 public:
  Binder(Tape& tape, Parameters* mut, const Parameters* cst)
      : tape_(tape), mut_(mut), cst_(cst) {}

  Var operator()(std::string_view name) const {
    if (mut_) return tape_.parameter(mut_->get(name));
    return tape_.constant(cst_->get(name));
  }
  bool trainable() const { return mut_ != nullptr; }

 private:
  Tape& tape_;
  Parameters* mut_;
  const Parameters* cst_;
};

ForwardResult run_forward(Tape& tape, const Tensor& image, const Binder& bind,
                          const ViTConfig& config) {
  config.validate();
  if (image.rank() != 3 || image.dim(0) != config.channels) {
    throw DimensionError("expected " + std::to_string(config.channels) +
                         "-channel C x H x W image, got " + shape_str(image.shape()));
  }
  const std::size_t p = config.patch_size;
  if (image.dim(1) % p != 0 || image.dim(2) % p != 0) {
    throw DimensionError("image " + shape_str(image.shape()) +
                         " not divisible by patch size " + std::to_string(p));
  }
  const GridShape grid{image.dim(1) / p, image.dim(2) / p};
  const std::size_t d = config.embed_dim;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));

  Tensor patches = patchify(image, p);
  Var x = bind.trainable() ? tape.constant(std::move(patches))
                           : tape.variable(std::move(patches));
  Var tokens = add_rowwise(matmul(x, bind("patch_embed.weight")),
                           bind("patch_embed.bias"));
  tokens = concat_rows(bind("cls_token"), tokens);
  if (config.use_positional_embedding) {
    Var pos = bind("pos_embed");
    if (!(grid == config.grid)) {
      const Tensor r = dense::kronecker(dense::bilinear_matrix(grid.h, config.grid.h),
                                        dense::bilinear_matrix(grid.w, config.grid.w));
      Var patch_pos = matmul(tape.constant(r), slice(pos, 1, config.grid.n(), 0, d));
      pos = concat_rows(slice(pos, 0, 1, 0, d), patch_pos);
    }
    tokens = add(tokens, pos);
  }

  ForwardResult result;
  result.grid = grid;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto b = block_prefix(l);
    Var normed = layer_norm(tokens, bind(b + "norm1.gamma"), bind(b + "norm1.beta"));
    AttentionRecord record;
    record.layer = l;
    Var mixed;
    Var attn_sum;
    for (std::size_t h = 0; h < config.num_heads; ++h) {
      const auto hp = head_prefix(l, h);
      Var q = add_rowwise(matmul(normed, bind(hp + "wq")), bind(hp + "bq"));
      Var k = add_rowwise(matmul(normed, bind(hp + "wk")), bind(hp + "bk"));
      Var v = add_rowwise(matmul(normed, bind(hp + "wv")), bind(hp + "bv"));
      Var attn = softmax_rows(scale(matmul(q, transpose(k)), attn_scale));
      tape.retain(attn);
      record.heads.push_back(attn);
      Var out = matmul(matmul(attn, v), bind(hp + "wo"));
      mixed = h == 0 ? out : add(mixed, out);
      attn_sum = h == 0 ? attn : add(attn_sum, attn);
    }
    record.matrix = config.num_heads == 1
                        ? attn_sum
                        : scale(attn_sum, 1.0 / static_cast<double>(config.num_heads));
    tape.retain(record.matrix);
    result.attentions.push_back(std::move(record));
    tokens = add(tokens, add_rowwise(mixed, bind(b + "attn.bo")));

    Var m = layer_norm(tokens, bind(b + "norm2.gamma"), bind(b + "norm2.beta"));
    m = gelu(add_rowwise(matmul(m, bind(b + "mlp.w1")), bind(b + "mlp.b1")));
    m = add_rowwise(matmul(m, bind(b + "mlp.w2")), bind(b + "mlp.b2"));
    tokens = add(tokens, m);
  }
  Var cls = layer_norm(slice(tokens, 0, 1, 0, d), bind("norm.gamma"), bind("norm.beta"));
  result.logits = add_rowwise(matmul(cls, bind("head.weight")), bind("head.bias"));
  return result;
}

}  // namespace

ForwardResult forward(Tape& tape, const Tensor& image, Parameters& params,
                      const ViTConfig& config) {
  return run_forward(tape, image, Binder(tape, &params, nullptr), config);
}

ForwardResult forward(Tape& tape, const Tensor& image, const Parameters& params,
                      const ViTConfig& config) {
  return run_forward(tape, image, Binder(tape, nullptr, &params), config);
}

Var class_score(const ForwardResult& result, std::size_t c) {
  const std::size_t k = result.logits.value().numel();
  if (c >= k) {
    throw ContractError("class index " + std::to_string(c) + " out of range (" +
                        std::to_string(k) + " classes)");
  }
  return slice(result.logits, 0, 1, c, 1);
}

std::vector<Tensor> attention_adjoints(const ForwardResult& result, std::size_t c) {
  if (c >= result.logits.value().numel()) {
    throw ContractError("class index out of range");
  }
  Tape& tape = result.tape();
  if (!tape.backward_done()) {
    throw StateError("attention adjoints requested before backward");
  }
  std::vector<Tensor> out;
  out.reserve(result.attentions.size());
  for (const auto& rec : result.attentions) {
    Tensor acc = tape.grad(rec.heads.front());
    for (std::size_t h = 1; h < rec.heads.size(); ++h) {
      const Tensor g = tape.grad(rec.heads[h]);
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
    }
    const double inv = 1.0 / static_cast<double>(rec.heads.size());
    for (double& v : acc.values()) v *= inv;
    out.push_back(std::move(acc));
  }
  return out;
}

std::vector<Tensor> compute_attention_adjoints(const ForwardResult& result,
                                               std::size_t c) {
  Tape& tape = result.tape();
  Var score = class_score(result, c);
  if (tape.backward_done()) tape.reset_grads();
  tape.backward(score);
  return attention_adjoints(result, c);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr std::array<char, 8> kMagic = {'A', 'C', 'R', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const char* p, std::size_t n) { os_.write(p, static_cast<std::streamsize>(n)); }

 private:
  void le(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os_.write(buf, n);
  }
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  void bytes(char* p, std::size_t n) {
    is_.read(p, static_cast<std::streamsize>(n));
    if (!is_) throw IoError("truncated checkpoint");
  }

 private:
  std::uint64_t le(int n) {
    unsigned char buf[8];
    is_.read(reinterpret_cast<char*>(buf), n);
    if (!is_) throw IoError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& is_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ViTConfig& config,
                     const Parameters& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  Writer w(os);
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kCheckpointVersion);
  for (std::size_t v : {config.patch_size, config.grid.h, config.grid.w, config.channels,
                        config.embed_dim, config.num_layers, config.num_heads,
                        config.mlp_ratio, config.num_classes}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(config.use_positional_embedding ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto extent : e.tensor.shape()) w.u64(extent);
    for (double v : e.tensor.data()) w.f64(v);
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  Reader r(is);
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw IoError("not an ACR checkpoint: " + path.string());
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ViTConfig& c = ck.config;
  c.patch_size = r.u32();
  c.grid.h = r.u32();
  c.grid.w = r.u32();
  c.channels = r.u32();
  c.embed_dim = r.u32();
  c.num_layers = r.u32();
  c.num_heads = r.u32();
  c.mlp_ratio = r.u32();
  c.num_classes = r.u32();
  c.use_positional_embedding = r.u32() != 0;
  c.validate();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.u32(), '\0');
    r.bytes(name.data(), name.size());
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw IoError("bad tensor rank in checkpoint");
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = r.f64();
    ck.params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ck;
}

}  // namespace acr
