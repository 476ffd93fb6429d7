#include "acr/synth_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "acr/error.hpp"
#include "acr/image_io.hpp"
#include "acr/rng.hpp"

namespace acr {

void SynthConfig::validate() const {
  if (num_classes < 1 || num_classes > kMaxShapeClasses) {
    throw ContractError("num_classes must be in [1, " + std::to_string(kMaxShapeClasses) +
                        "]");
  }
  if (height < 16 || width < 16) throw ContractError("images must be at least 16x16");
  if (min_shapes < 1 || min_shapes > max_shapes) {
    throw ContractError("need 1 <= min_shapes <= max_shapes");
  }
}

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names = {"disk",  "square", "triangle",
                                                 "ring",  "cross",  "diamond"};
  return names;
}

Tensor SyntheticSample::targets() const {
  Tensor t({1, labels.size()});
  for (std::size_t k = 0; k < labels.size(); ++k) t[k] = labels[k];
  return t;
}

std::vector<std::size_t> SyntheticSample::present_classes() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k]) out.push_back(k);
  return out;
}

namespace {

constexpr std::array<std::array<double, 3>, kMaxShapeClasses> kPalette = {{
    {0.85, 0.25, 0.20},
    {0.20, 0.75, 0.30},
    {0.25, 0.35, 0.90},
    {0.90, 0.80, 0.20},
    {0.80, 0.30, 0.85},
    {0.20, 0.80, 0.85},
}};

struct Placement {
  std::size_t cls;
  double cx, cy, size;
  std::array<double, 3> color;
};

bool inside(std::size_t cls, double dx, double dy, double s) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (cls) {
    case 0: return dx * dx + dy * dy <= s * s;
    case 1: return ax <= 0.85 * s && ay <= 0.85 * s;
    case 2: return dy >= -s && dy <= s && ax <= 0.55 * (dy + s);
    case 3: {
      const double r2 = dx * dx + dy * dy;
      return r2 <= s * s && r2 >= 0.3 * s * s;
    }
    case 4: return (ax <= 0.3 * s && ay <= s) || (ay <= 0.3 * s && ax <= s);
    default: return ax + ay <= s;
  }
}

double texture(std::size_t cls, std::size_t x, std::size_t y) {
  switch (cls) {
    case 1: return (y / 2) % 2 ? 0.07 : -0.07;
    case 2: return ((x / 2) + (y / 2)) % 2 ? 0.07 : -0.07;
    case 4: return (x / 2) % 2 ? 0.07 : -0.07;
    case 5: return ((x + y) / 2) % 2 ? 0.07 : -0.07;
    default: return 0.0;
  }
}

double quantize(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

SyntheticSample generate_sample(const SynthConfig& config, std::size_t index) {
  config.validate();
  const std::uint64_t seed = Rng::derive(config.seed, index);
  Rng rng(seed);
  const std::size_t h = config.height, w = config.width, k = config.num_classes;

  // Distinct classes, count uniform in [min_shapes, min(max_shapes, K)].
  const std::size_t hi = std::min(config.max_shapes, k);
  const std::size_t lo = std::min(config.min_shapes, hi);
  const std::size_t count = lo + rng.index(hi - lo + 1);
  std::vector<std::size_t> classes(k);
  for (std::size_t i = 0; i < k; ++i) classes[i] = i;
  for (std::size_t i = k; i > 1; --i) std::swap(classes[i - 1], classes[rng.index(i)]);
  classes.resize(count);

  const double min_size = 0.14 * static_cast<double>(std::min(h, w));
  const double max_size = 0.25 * static_cast<double>(std::min(h, w));

  LabelMask mask(h, w, 0);
  std::vector<Placement> placed;
  std::vector<std::size_t> area;  // full area of each placed shape
  for (std::size_t cls : classes) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      Placement p{cls, 0, 0, rng.uniform(min_size, max_size), {}};
      p.cx = rng.uniform(p.size, static_cast<double>(w - 1) - p.size);
      p.cy = rng.uniform(p.size, static_cast<double>(h - 1) - p.size);
      for (std::size_t c = 0; c < 3; ++c) {
        p.color[c] = std::clamp(kPalette[cls][c] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
      }
      LabelMask trial = mask;
      std::size_t own = 0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          if (inside(cls, static_cast<double>(x) - p.cx, static_cast<double>(y) - p.cy,
                     p.size)) {
            trial.at(y, x) = static_cast<std::uint16_t>(cls + 1);
            ++own;
          }
      if (own == 0) continue;
      bool visible = true;
      for (std::size_t i = 0; i < placed.size(); ++i) {
        const auto label = static_cast<std::uint16_t>(placed[i].cls + 1);
        const auto vis = static_cast<std::size_t>(
            std::count(trial.labels.begin(), trial.labels.end(), label));
        if (10 * vis < 3 * area[i]) visible = false;
      }
      if (!visible) continue;
      mask = std::move(trial);
      placed.push_back(p);
      area.push_back(own);
      break;
    }
  }
  if (placed.empty()) throw Error("failed to place any shape for sample " + std::to_string(index));

  SyntheticSample s;
  s.seed = seed;
  s.labels.assign(k, 0);
  for (const auto& p : placed) s.labels[p.cls] = 1;
  s.mask = std::move(mask);

  Tensor img({3, h, w});
  const double base = rng.uniform(0.3, 0.6);
  std::array<double, 3> bg{};
  for (auto& c : bg) c = base + rng.uniform(-0.04, 0.04);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint16_t label = s.mask.at(y, x);
      for (std::size_t c = 0; c < 3; ++c) {
        double v;
        if (label == 0) {
          v = bg[c] + rng.uniform(-0.08, 0.08);
        } else {
          const Placement* p = nullptr;
          for (const auto& q : placed)
            if (q.cls + 1 == label) p = &q;
          v = p->color[c] + texture(p->cls, x, y) + rng.uniform(-0.03, 0.03);
        }
        img[(c * h + y) * w + x] = quantize(v);
      }
    }
  s.image = std::move(img);
  return s;
}

Dataset generate(const SynthConfig& config) {
  config.validate();
  Dataset d{config, {}};
  d.samples.reserve(config.num_samples);
  for (std::size_t i = 0; i < config.num_samples; ++i) {
    d.samples.push_back(generate_sample(config, i));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

// Source pixel (sy, sx) for target pixel (y, x) of an h x w image.
void source_pixel(TransformKind kind, std::size_t h, std::size_t w, std::size_t y,
                  std::size_t x, std::size_t& sy, std::size_t& sx) {
  sy = y;
  sx = x;
  switch (kind) {
    case TransformKind::FlipH: sx = w - 1 - x; break;
    case TransformKind::FlipV: sy = h - 1 - y; break;
    case TransformKind::FlipHV:
    case TransformKind::Rot180:
      sy = h - 1 - y;
      sx = w - 1 - x;
      break;
    case TransformKind::Rot90:
      sy = x;
      sx = w - 1 - y;
      break;
    case TransformKind::Rot270:
      sy = h - 1 - x;
      sx = y;
      break;
    default: break;
  }
}

}  // namespace

Tensor augment(const Tensor& image, const SpatialTransform& t, std::size_t patch_size) {
  t.validate();
  if (image.rank() != 3) throw DimensionError("augment expects C x H x W");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (t.kind == TransformKind::Identity) return image;
  if (t.kind == TransformKind::Resize) {
    const std::size_t th = t.resize_target->h * patch_size;
    const std::size_t tw = t.resize_target->w * patch_size;
    const Tensor rh = dense::bilinear_matrix(th, h);
    const Tensor rw = dense::bilinear_matrix(tw, w);
    Tensor out({c, th, tw});
    std::vector<double> tmp(th * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::fill(tmp.begin(), tmp.end(), 0.0);
      for (std::size_t i = 0; i < th; ++i)
        for (std::size_t k = 0; k < h; ++k) {
          const double wt = rh.at(i, k);
          if (wt == 0.0) continue;
          for (std::size_t j = 0; j < w; ++j) tmp[i * w + j] += wt * image[(ch * h + k) * w + j];
        }
      for (std::size_t i = 0; i < th; ++i)
        for (std::size_t j = 0; j < tw; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < w; ++k) s += tmp[i * w + k] * rw.at(j, k);
          out[(ch * th + i) * tw + j] = s;
        }
    }
    return out;
  }
  const bool swap = t.kind == TransformKind::Rot90 || t.kind == TransformKind::Rot270;
  const std::size_t th = swap ? w : h, tw = swap ? h : w;
  Tensor out({c, th, tw});
  for (std::size_t y = 0; y < th; ++y)
    for (std::size_t x = 0; x < tw; ++x) {
      std::size_t sy, sx;
      source_pixel(t.kind, h, w, y, x, sy, sx);
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(ch * th + y) * tw + x] = image[(ch * h + sy) * w + sx];
    }
  return out;
}

LabelMask augment(const LabelMask& mask, const SpatialTransform& t, std::size_t patch_size) {
  t.validate();
  const std::size_t h = mask.height, w = mask.width;
  if (t.kind == TransformKind::Identity) return mask;
  if (t.kind == TransformKind::Resize) {
    const std::size_t th = t.resize_target->h * patch_size;
    const std::size_t tw = t.resize_target->w * patch_size;
    LabelMask out(th, tw);
    for (std::size_t y = 0; y < th; ++y)
      for (std::size_t x = 0; x < tw; ++x) {
        const auto sy = std::min(h - 1, (2 * y + 1) * h / (2 * th));
        const auto sx = std::min(w - 1, (2 * x + 1) * w / (2 * tw));
        out.at(y, x) = mask.at(sy, sx);
      }
    return out;
  }
  const bool swap = t.kind == TransformKind::Rot90 || t.kind == TransformKind::Rot270;
  LabelMask out(swap ? w : h, swap ? h : w);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      std::size_t sy, sx;
      source_pixel(t.kind, h, w, y, x, sy, sx);
      out.at(y, x) = mask.at(sy, sx);
    }
  return out;
}

AugmentedPair make_pair(const Tensor& image, const SpatialTransform& t,
                        std::size_t patch_size) {
  return {image, augment(image, t, patch_size), t};
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::string stem(std::size_t i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  const auto& c = dataset.config;
  nlohmann::json meta = {{"num_samples", dataset.samples.size()},
                         {"num_classes", c.num_classes},
                         {"height", c.height},
                         {"width", c.width},
                         {"channels", 3},
                         {"min_shapes", c.min_shapes},
                         {"max_shapes", c.max_shapes},
                         {"seed", c.seed},
                         {"class_names", std::vector<std::string>(
                                             shape_class_names().begin(),
                                             shape_class_names().begin() +
                                                 static_cast<std::ptrdiff_t>(c.num_classes))}};
  {
    std::ofstream os(dir / "meta.json", std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / "meta.json").string());
    os << meta.dump(2) << '\n';
  }
  std::ofstream index(dir / "index.jsonl", std::ios::trunc);
  if (!index) throw IoError("cannot write " + (dir / "index.jsonl").string());
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    const std::string img = "images/" + stem(i) + ".ppm";
    const std::string msk = "masks/" + stem(i) + ".pgm";
    write_image(dir / img, s.image);
    write_mask(dir / msk, s.mask);
    nlohmann::json rec = {{"id", i}, {"image", img}, {"mask", msk},
                          {"labels", s.labels}, {"seed", s.seed}};
    index << rec.dump() << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "meta.json");
  if (!ms) throw IoError("missing meta.json in " + dir.string());
  Dataset d;
  try {
    const auto meta = nlohmann::json::parse(ms);
    d.config.num_samples = meta.at("num_samples").get<std::size_t>();
    d.config.num_classes = meta.at("num_classes").get<std::size_t>();
    d.config.height = meta.at("height").get<std::size_t>();
    d.config.width = meta.at("width").get<std::size_t>();
    d.config.min_shapes = meta.value("min_shapes", std::size_t{1});
    d.config.max_shapes = meta.value("max_shapes", std::size_t{3});
    d.config.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad meta.json: " + std::string(e.what()));
  }
  std::ifstream index(dir / "index.jsonl");
  if (!index) throw IoError("missing index.jsonl in " + dir.string());
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    SyntheticSample s;
    try {
      const auto rec = nlohmann::json::parse(line);
      s.image = read_image(dir / rec.at("image").get<std::string>());
      s.mask = read_mask(dir / rec.at("mask").get<std::string>());
      s.labels = rec.at("labels").get<std::vector<std::uint8_t>>();
      s.seed = rec.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad index record: " + std::string(e.what()));
    }
    if (s.labels.size() != d.config.num_classes) {
      throw IoError("label vector length does not match num_classes");
    }
    d.samples.push_back(std::move(s));
  }
  if (d.samples.size() != d.config.num_samples) {
    throw IoError("index.jsonl has " + std::to_string(d.samples.size()) +
                  " records, meta.json declares " + std::to_string(d.config.num_samples));
  }
  return d;
}

}  // namespace acr
