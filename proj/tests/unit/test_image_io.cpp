#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "acr/error.hpp"
#include "acr/image_io.hpp"
#include "acr/rng.hpp"

using namespace acr;

namespace {

std::filesystem::path temp(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("acr_test_io_" + name);
}

Tensor quantized(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
  Tensor t({c, h, w});
  for (double& v : t.values()) v = static_cast<double>(rng.index(256)) / 255.0;
  return t;
}

}  // namespace

TEST(ImageIo, PpmRoundTrip) {
  Rng rng(1);
  const Tensor img = quantized(rng, 3, 5, 7);
  const auto p = temp("rgb.ppm");
  write_image(p, img);
  EXPECT_EQ(read_image(p), img);
  std::filesystem::remove(p);
}

TEST(ImageIo, PgmRoundTrip) {
  Rng rng(2);
  const Tensor img = quantized(rng, 1, 4, 3);
  const auto p = temp("gray.pgm");
  write_image(p, img);
  EXPECT_EQ(read_image(p), img);
  std::filesystem::remove(p);
}

TEST(ImageIo, RejectsOtherChannelCounts) {
  EXPECT_THROW(write_image(temp("bad.ppm"), Tensor({2, 3, 3})), DimensionError);
}

TEST(ImageIo, MaskRoundTrip) {
  LabelMask m(3, 4);
  for (std::size_t i = 0; i < m.size(); ++i) m.labels[i] = static_cast<std::uint16_t>(i % 6);
  const auto p = temp("mask.pgm");
  write_mask(p, m);
  EXPECT_EQ(read_mask(p), m);
  std::filesystem::remove(p);
}

TEST(ImageIo, MissingAndCorruptFiles) {
  EXPECT_THROW(read_image(temp("missing.ppm")), IoError);
  const auto p = temp("corrupt.ppm");
  {
    std::ofstream os(p, std::ios::binary);
    os << "P6\n4 4\n255\nabc";
  }
  EXPECT_THROW(read_image(p), IoError);
  std::filesystem::remove(p);
}

TEST(ImageIo, CsvKeepsFullPrecision) {
  const Tensor m = Tensor::matrix(2, 2, {0.1, 1.0 / 3.0, -2.5e-10, 7.0});
  const auto p = temp("m.csv");
  write_csv(p, m);
  std::ifstream is(p);
  std::vector<double> back;
  std::string line;
  while (std::getline(is, line)) {
    std::size_t pos = 0;
    while (pos < line.size()) {
      std::size_t used = 0;
      back.push_back(std::stod(line.substr(pos), &used));
      pos += used + 1;
    }
  }
  EXPECT_EQ(back, m.values());
  std::filesystem::remove(p);
}
