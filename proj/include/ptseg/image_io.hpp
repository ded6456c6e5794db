#pragma once

// 8-bit PNG images and the conversions to and from float feature maps and
// label maps. Values map as v = k / 255, so a quantized map survives a PNG
// round trip exactly.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ptseg/label_map.hpp"
#include "ptseg/warp.hpp"

namespace ptseg::io {

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB), interleaved
  std::vector<std::uint8_t> pixels;
};

/// Reads any PNG and converts to `channels` (1 or 3).
Image8 read_png(const std::filesystem::path& path, int channels);
void write_png(const std::filesystem::path& path, const Image8& image);

/// [C, H, W] with C in {1, 3}; values clamped to [0, 1] and rounded.
Image8 to_image(const warp::FeatureMap& fm);
warp::FeatureMap to_feature_map(const Image8& image);

/// Label values must lie in [0, 255].
Image8 to_image(const LabelMap& labels);
LabelMap to_label_map(const Image8& image);

/// Rounds every value to the nearest multiple of 1/255 (after clamping).
void quantize(warp::FeatureMap& fm);

}  // namespace ptseg::io
