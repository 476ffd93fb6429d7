#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace acr {

/// Per-pixel class labels; 0 is background, k > 0 is class k - 1.
struct LabelMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> labels;

  LabelMask() = default;
  LabelMask(std::size_t h, std::size_t w, std::uint16_t fill = 0)
      : height(h), width(w), labels(h * w, fill) {}

  std::uint16_t& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  std::uint16_t at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
  std::size_t size() const { return labels.size(); }

  friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

}  // namespace acr
