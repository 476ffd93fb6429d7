#include "acr/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>

#include "acr/error.hpp"

namespace acr {

namespace {

void write_pnm(const std::filesystem::path& path, char kind, std::size_t w,
               std::size_t h, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << 'P' << kind << '\n' << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

struct Pnm {
  int channels = 0;
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> bytes;
};

std::size_t read_header_int(std::istream& is, const std::filesystem::path& path) {
  // Skip whitespace and comments.
  while (true) {
    int c = is.peek();
    if (c == '#') {
      is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  std::size_t v = 0;
  if (!(is >> v)) throw IoError("malformed netpbm header in " + path.string());
  return v;
}

Pnm read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char p = 0, kind = 0;
  is.get(p).get(kind);
  if (p != 'P' || (kind != '5' && kind != '6')) {
    throw IoError("unsupported image format in " + path.string());
  }
  Pnm img;
  img.channels = kind == '5' ? 1 : 3;
  img.width = read_header_int(is, path);
  img.height = read_header_int(is, path);
  if (read_header_int(is, path) != 255) throw IoError("only 8-bit images supported");
  is.get();  // single whitespace before raster
  img.bytes.resize(img.width * img.height * static_cast<std::size_t>(img.channels));
  is.read(reinterpret_cast<char*>(img.bytes.data()),
          static_cast<std::streamsize>(img.bytes.size()));
  if (!is) throw IoError("truncated raster in " + path.string());
  return img;
}

}  // namespace

void write_image(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw DimensionError("write_image expects 1 or 3 channel C x H x W, got " +
                         shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> bytes(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image[(ch * h + y) * w + x], 0.0, 1.0);
        bytes[(y * w + x) * c + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  write_pnm(path, c == 1 ? '5' : '6', w, h, bytes);
}

Tensor read_image(const std::filesystem::path& path) {
  const Pnm img = read_pnm(path);
  const auto c = static_cast<std::size_t>(img.channels);
  Tensor out({c, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(ch * img.height + y) * img.width + x] =
            img.bytes[(y * img.width + x) * c + ch] / 255.0;
  return out;
}

void write_mask(const std::filesystem::path& path, const LabelMask& mask) {
  std::vector<std::uint8_t> bytes(mask.labels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (mask.labels[i] > 255) throw ContractError("mask label exceeds 8 bits");
    bytes[i] = static_cast<std::uint8_t>(mask.labels[i]);
  }
  write_pnm(path, '5', mask.width, mask.height, bytes);
}

LabelMask read_mask(const std::filesystem::path& path) {
  const Pnm img = read_pnm(path);
  if (img.channels != 1) throw IoError("mask must be a PGM: " + path.string());
  LabelMask m(img.height, img.width);
  for (std::size_t i = 0; i < img.bytes.size(); ++i) m.labels[i] = img.bytes[i];
  return m;
}

void write_csv(const std::filesystem::path& path, const Tensor& matrix) {
  if (matrix.rank() != 2) throw DimensionError("write_csv expects a matrix");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17);
  for (std::size_t i = 0; i < matrix.dim(0); ++i) {
    for (std::size_t j = 0; j < matrix.dim(1); ++j) {
      if (j) os << ',';
      os << matrix.at(i, j);
    }
    os << '\n';
  }
}

}  // namespace acr
