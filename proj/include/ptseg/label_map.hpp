#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace ptseg {

/// Integer per-pixel map (class ids or instance ids), row-major.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> values;

  LabelMap() = default;
  LabelMap(int h, int w, int fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}
  /// Takes ownership of `v`; an empty vector is allowed and filled in later.
  LabelMap(int h, int w, std::vector<int> v) : height(h), width(w), values(std::move(v)) {}

  int& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  int at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
  bool operator==(const LabelMap&) const = default;
};

}  // namespace ptseg
