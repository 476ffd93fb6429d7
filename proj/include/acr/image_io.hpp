#pragma once

// Netpbm (binary PGM/PPM) and CSV helpers.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "acr/mask.hpp"
#include "acr/tensor.hpp"

namespace acr {

/// Writes a 1-channel (PGM) or 3-channel (PPM) C x H x W image with values in
/// [0, 1], rounded to 8 bits.
void write_image(const std::filesystem::path& path, const Tensor& image);
/// Reads PGM/PPM into C x H x W with values k / 255.
Tensor read_image(const std::filesystem::path& path);

/// Mask labels stored verbatim as 8-bit PGM gray levels.
void write_mask(const std::filesystem::path& path, const LabelMask& mask);
LabelMask read_mask(const std::filesystem::path& path);

/// Matrix as comma-separated rows with 17 significant digits.
void write_csv(const std::filesystem::path& path, const Tensor& matrix);

}  // namespace acr
