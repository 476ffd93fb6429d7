#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace acr {

/// Inclusive range of transformer layers, written "A..B".
struct LayerRange {
  std::size_t first = 0;
  std::size_t last = 0;

  static LayerRange all(std::size_t num_layers);
  /// The last `count` layers (clamped to the model depth).
  static LayerRange last_n(std::size_t num_layers, std::size_t count);
  static LayerRange parse(std::string_view text);

  std::size_t size() const { return last - first + 1; }
  std::string str() const;
  /// Throws ContractError when empty or beyond the model depth.
  void validate(std::size_t num_layers) const;

  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

}  // namespace acr
