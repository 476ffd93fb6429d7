#include "acr/layer_range.hpp"

#include <algorithm>
#include <charconv>

#include "acr/error.hpp"

namespace acr {

LayerRange LayerRange::all(std::size_t num_layers) {
  if (num_layers == 0) throw ContractError("model has no layers");
  return {0, num_layers - 1};
}

LayerRange LayerRange::last_n(std::size_t num_layers, std::size_t count) {
  if (num_layers == 0 || count == 0) throw ContractError("empty layer range");
  count = std::min(count, num_layers);
  return {num_layers - count, num_layers - 1};
}

LayerRange LayerRange::parse(std::string_view text) {
  const auto dots = text.find("..");
  auto number = [&](std::string_view s) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
      throw ContractError("layer range must be A..B, got '" + std::string(text) + "'");
    }
    return v;
  };
  if (dots == std::string_view::npos) {
    const auto v = number(text);
    return {v, v};
  }
  LayerRange r{number(text.substr(0, dots)), number(text.substr(dots + 2))};
  if (r.first > r.last) throw ContractError("empty layer range " + std::string(text));
  return r;
}

std::string LayerRange::str() const {
  return std::to_string(first) + ".." + std::to_string(last);
}

void LayerRange::validate(std::size_t num_layers) const {
  if (first > last) throw ContractError("empty layer range " + str());
  if (last >= num_layers) {
    throw ContractError("layer range " + str() + " exceeds model depth " +
                        std::to_string(num_layers));
  }
}

}  // namespace acr
