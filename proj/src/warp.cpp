#include "ptseg/warp.hpp"

#include <cmath>
#include <string>

#include "ptseg/error.hpp"

namespace ptseg::warp {
namespace {

// Sample coordinates this close to an integer are snapped onto the grid so
// that integer-valued maps (identity, integer shifts) reproduce exactly.
constexpr double kSnap = 1e-9;

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < kSnap ? r : v;
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

FeatureMap::FeatureMap(Shape3 s, std::vector<double> v) : shape(s), values(std::move(v)) {
  if (values.size() != shape.size()) {
    throw Error(ErrorCode::ShapeMismatch, "feature map value count disagrees with shape");
  }
}

SamplingPlan::SamplingPlan(const geometry::Homography& h)
    : src_h_(h.source().height),
      src_w_(h.source().width),
      dst_h_(h.target().height),
      dst_w_(h.target().width),
      taps_(static_cast<std::size_t>(dst_h_) * dst_w_ * 4) {
  geometry::Mat3 inv = h.matrix().inverse();
  if (inv(2, 2) != 0.0) inv /= inv(2, 2);

  // Points behind the source camera show up with the opposite homogeneous
  // sign from the viewport centre; they are dropped.
  const geometry::Vec3 centre =
      inv * geometry::Vec3(0.5 * (dst_w_ - 1), 0.5 * (dst_h_ - 1), 1.0);
  const double ref_sign = centre.z() < 0.0 ? -1.0 : 1.0;

  for (int y = 0; y < dst_h_; ++y) {
    for (int x = 0; x < dst_w_; ++x) {
      Tap* t = &taps_[(static_cast<std::size_t>(y) * dst_w_ + x) * 4];
      const geometry::Vec3 s = inv * geometry::Vec3(x, y, 1.0);
      if (!(s.z() * ref_sign > 0.0)) continue;
      const double sx = snap(s.x() / s.z());
      const double sy = snap(s.y() / s.z());
      if (!std::isfinite(sx) || !std::isfinite(sy)) continue;
      if (sx <= -1.0 || sy <= -1.0 || sx >= src_w_ || sy >= src_h_) continue;
      const double fx0 = std::floor(sx);
      const double fy0 = std::floor(sy);
      const int x0 = static_cast<int>(fx0);
      const int y0 = static_cast<int>(fy0);
      const double ax = sx - fx0;
      const double ay = sy - fy0;
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      const double ws[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      for (int k = 0; k < 4; ++k) {
        if (ws[k] == 0.0 || xs[k] < 0 || ys[k] < 0 || xs[k] >= src_w_ || ys[k] >= src_h_) {
          continue;
        }
        t[k].index = ys[k] * src_w_ + xs[k];
        t[k].weight = ws[k];
      }
    }
  }
}

void SamplingPlan::forward(std::span<const double> in, std::span<double> out,
                           int channels) const {
  const std::size_t src_plane = static_cast<std::size_t>(src_h_) * src_w_;
  const std::size_t dst_plane = static_cast<std::size_t>(dst_h_) * dst_w_;
  if (in.size() != src_plane * channels || out.size() != dst_plane * channels) {
    throw Error(ErrorCode::ShapeMismatch, "warp buffers disagree with the sampling plan");
  }
  for (int c = 0; c < channels; ++c) {
    const double* src = in.data() + c * src_plane;
    double* dst = out.data() + c * dst_plane;
    for (std::size_t p = 0; p < dst_plane; ++p) {
      const Tap* t = &taps_[p * 4];
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        if (t[k].index >= 0) acc += t[k].weight * src[t[k].index];
      }
      dst[p] = acc;
    }
  }
}

void SamplingPlan::adjoint(std::span<const double> grad_out, std::span<double> grad_in,
                           int channels) const {
  const std::size_t src_plane = static_cast<std::size_t>(src_h_) * src_w_;
  const std::size_t dst_plane = static_cast<std::size_t>(dst_h_) * dst_w_;
  if (grad_in.size() != src_plane * channels || grad_out.size() != dst_plane * channels) {
    throw Error(ErrorCode::ShapeMismatch, "warp buffers disagree with the sampling plan");
  }
  for (int c = 0; c < channels; ++c) {
    const double* g = grad_out.data() + c * dst_plane;
    double* gi = grad_in.data() + c * src_plane;
    for (std::size_t p = 0; p < dst_plane; ++p) {
      const Tap* t = &taps_[p * 4];
      for (int k = 0; k < 4; ++k) {
        if (t[k].index >= 0) gi[t[k].index] += t[k].weight * g[p];
      }
    }
  }
}

FeatureMap warp_forward(const FeatureMap& fm, const geometry::Homography& h) {
  const auto& src = h.source();
  if (fm.shape.height != src.height || fm.shape.width != src.width) {
    throw Error(ErrorCode::ShapeMismatch,
                "feature map " + std::to_string(fm.shape.height) + "x" +
                    std::to_string(fm.shape.width) + " does not match source viewport " +
                    std::to_string(src.height) + "x" + std::to_string(src.width));
  }
  const SamplingPlan plan(h);
  FeatureMap out(Shape3{fm.shape.channels, h.target().height, h.target().width});
  plan.forward(fm.values, out.values, fm.shape.channels);
  return out;
}

FeatureMap warp_backward(const FeatureMap& grad_out, const geometry::Homography& h,
                         Shape3 in_shape) {
  const auto& dst = h.target();
  if (grad_out.shape.height != dst.height || grad_out.shape.width != dst.width ||
      in_shape.height != h.source().height || in_shape.width != h.source().width ||
      in_shape.channels != grad_out.shape.channels) {
    throw Error(ErrorCode::ShapeMismatch, "gradient shape does not match homography viewports");
  }
  const SamplingPlan plan(h);
  FeatureMap grad_in(in_shape);
  plan.adjoint(grad_out.values, grad_in.values, in_shape.channels);
  return grad_in;
}

geometry::ViewSpec scale_view(const geometry::ViewSpec& view, int stride) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  const double s = static_cast<double>(stride);
  return geometry::ViewSpec{
      {view.intrinsics.f / s, view.intrinsics.cx / s, view.intrinsics.cy / s},
      ceil_div(view.width, stride),
      ceil_div(view.height, stride)};
}

geometry::Homography scale_homography_for_stride(const geometry::Homography& h, int stride) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  if (stride == 1) return h;
  const double s = static_cast<double>(stride);
  const geometry::Mat3 scale = geometry::Vec3(1.0 / s, 1.0 / s, 1.0).asDiagonal();
  const geometry::Mat3 unscale = geometry::Vec3(s, s, 1.0).asDiagonal();
  return geometry::Homography(scale * h.matrix() * unscale, scale_view(h.source(), stride),
                              scale_view(h.target(), stride));
}

}  // namespace ptseg::warp
