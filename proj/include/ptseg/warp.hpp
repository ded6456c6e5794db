#pragma once

// Perspective Transformer Layer: bilinear inverse warping of C x H x W feature
// maps under a fixed homography, plus its exact adjoint.
//
// The homography maps source pixels to target pixels. Each target pixel pulls
// from the source at H^-1 (x, y, 1) with bilinear weights; taps outside the
// source contribute zero. Pixel (i, j) is located at (x = j, y = i).

#include <cstdint>
#include <span>
#include <vector>

#include "ptseg/geometry.hpp"

namespace ptseg::warp {

struct Shape3 {
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  bool operator==(const Shape3&) const = default;
};

struct FeatureMap {
  Shape3 shape;
  std::vector<double> values;

  FeatureMap() = default;
  explicit FeatureMap(Shape3 s, double fill = 0.0) : shape(s), values(s.size(), fill) {}
  FeatureMap(Shape3 s, std::vector<double> v);

  double& at(int c, int y, int x) { return values[index(c, y, x)]; }
  double at(int c, int y, int x) const { return values[index(c, y, x)]; }

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape.height + y) * shape.width + x;
  }
};

/// Bilinear taps for every target pixel of a homography, computed once and
/// reused for every channel, forward and backward.
class SamplingPlan {
 public:
  explicit SamplingPlan(const geometry::Homography& h);

  int source_height() const { return src_h_; }
  int source_width() const { return src_w_; }
  int target_height() const { return dst_h_; }
  int target_width() const { return dst_w_; }

  /// out[c] = W in[c] for each channel; `out` is overwritten.
  void forward(std::span<const double> in, std::span<double> out, int channels) const;
  /// grad_in[c] += W^T grad_out[c]; accumulates into `grad_in`.
  void adjoint(std::span<const double> grad_out, std::span<double> grad_in, int channels) const;

 private:
  struct Tap {
    std::int32_t index = -1;
    double weight = 0.0;
  };
  int src_h_, src_w_, dst_h_, dst_w_;
  std::vector<Tap> taps_;  // 4 per target pixel
};

/// Output has the target viewport's dimensions.
FeatureMap warp_forward(const FeatureMap& fm, const geometry::Homography& h);

/// Gradient with respect to the input of warp_forward, given the output
/// gradient; the adjoint of the (linear) forward map.
FeatureMap warp_backward(const FeatureMap& grad_out, const geometry::Homography& h,
                         Shape3 in_shape);

/// The same homography expressed on maps downsampled by `stride`:
/// S H S^-1 with S = diag(1/stride, 1/stride, 1), viewports ceil-divided.
geometry::Homography scale_homography_for_stride(const geometry::Homography& h, int stride);

/// Viewport of a view after downsampling by `stride` (ceil division).
geometry::ViewSpec scale_view(const geometry::ViewSpec& view, int stride);

}  // namespace ptseg::warp
