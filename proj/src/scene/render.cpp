#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "ptseg/error.hpp"
#include "ptseg/scene.hpp"

namespace ptseg::scene {

using geometry::Mat3;
using geometry::Vec3;

namespace {

constexpr std::array<double, 3> kSky{0.55, 0.68, 0.85};
constexpr std::array<double, 3> kGrass{0.22, 0.40, 0.18};
constexpr std::array<double, 3> kRoad{0.36, 0.36, 0.37};
constexpr std::array<double, 3> kPaint{0.92, 0.92, 0.88};

}  // namespace

void CameraRig::validate() const {
  view.validate();
  if (!(height > 0.0)) throw Error(ErrorCode::InvalidArgument, "camera height must be positive");
  if (!(pitch > 0.0 && pitch < std::numbers::pi / 2)) {
    throw Error(ErrorCode::InvalidArgument, "pitch must lie in (0, pi/2)");
  }
  if (!std::isfinite(roll)) throw Error(ErrorCode::InvalidArgument, "roll must be finite");
}

Mat3 CameraRig::world_to_camera() const {
  const double dep = std::numbers::pi / 2 - pitch;
  const double ca = std::cos(dep), sa = std::sin(dep);
  Mat3 rx;
  rx << 1, 0, 0, 0, ca, -sa, 0, sa, ca;
  const double cr = std::cos(roll), sr = std::sin(roll);
  Mat3 rz;
  rz << cr, -sr, 0, sr, cr, 0, 0, 0, 1;
  return rz * rx;
}

geometry::GroundPlane CameraRig::ground_plane() const {
  return {world_to_camera() * Vec3(0, 1, 0), height};
}

Eigen::Vector2d CameraRig::project(double x, double z) const {
  const Vec3 p = view.intrinsics.matrix() * (world_to_camera() * Vec3(x, height, z));
  return {p.x() / p.z(), p.y() / p.z()};
}

std::optional<Eigen::Vector2d> CameraRig::ground_point(double px, double py) const {
  const Vec3 d = world_to_camera().transpose() * view.intrinsics.unproject(px, py);
  if (!(d.y() > 1e-12)) return std::nullopt;
  const double t = height / d.y();
  return Eigen::Vector2d(t * d.x(), t * d.z());
}

geometry::HorizonLine CameraRig::horizon() const {
  const Mat3 r = world_to_camera();
  const Mat3 k = view.intrinsics.matrix();
  Vec3 a = k * (r * Vec3(-1, 0, 1));
  Vec3 b = k * (r * Vec3(1, 0, 1));
  a /= a.z();
  b /= b.z();
  const Vec3 n = ground_plane().normal;
  const Mat3 kinv = view.intrinsics.inverse();
  if ((kinv * a).cross(kinv * b).dot(n) < 0) std::swap(a, b);
  return {a, b};
}

double CameraRig::horizon_row(double x) const {
  const auto h = horizon();
  return h.left.y() + (x - h.left.x()) * (h.right.y() - h.left.y()) / (h.right.x() - h.left.x());
}

geometry::KeyPointSet CameraRig::keypoints(double half_width, double far_z) const {
  const double w = view.width - 1.0, h = view.height - 1.0;
  const auto fl = project(-half_width, far_z);
  const auto fr = project(half_width, far_z);
  return geometry::KeyPointSet(
      {Vec3(0, h, 1), Vec3(w, h, 1), Vec3(fr.x(), fr.y(), 1), Vec3(fl.x(), fl.y(), 1)});
}

geometry::Homography CameraRig::bev_homography(const geometry::KeyPointSet& kp) const {
  const Vec3 omega = geometry::ground_normal_to_axis_angle(ground_plane().normal);
  const auto r = geometry::axis_angle_to_rotation(-omega);
  const auto vp = geometry::optimal_viewport(view.intrinsics, r, kp, view.width);
  const geometry::ViewSpec target{vp.intrinsics, view.width, vp.height};
  return geometry::pure_rotation_homography(view, target, r);
}

void SceneConfig::validate() const {
  camera.validate();
  if (lane_count < 1) throw Error(ErrorCode::InvalidArgument, "lane_count must be >= 1");
  if (!(lane_spacing > 0.0) || !(marking_width > 0.0) || !(max_range > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "lane spacing, marking width and range must be positive");
  }
  if (!(dash_length > 0.0) || gap_length < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "dash pattern must have positive dash length");
  }
  if (supersampling < 1) throw Error(ErrorCode::InvalidArgument, "supersampling must be >= 1");
  if (noise < 0.0) throw Error(ErrorCode::InvalidArgument, "noise must be non-negative");
}

double SceneConfig::lane_x(int k, double z) const {
  return (k - 0.5 * (lane_count - 1)) * lane_spacing - lateral_offset + curvature * z * z;
}

std::vector<int> default_h_samples(int height) {
  std::vector<int> rows;
  for (int y = static_cast<int>(std::ceil(0.4 * height)); y < height; y += 8) rows.push_back(y);
  return rows;
}

bool SceneSample::operator==(const SceneSample& o) const {
  return image.shape == o.image.shape && image.values == o.image.values &&
         semantic == o.semantic && instance == o.instance && lanes == o.lanes &&
         horizon.left == o.horizon.left && horizon.right == o.horizon.right &&
         bev.matrix() == o.bev.matrix() && bev.source() == o.bev.source() &&
         bev.target() == o.bev.target();
}

namespace {

struct Marking {
  int cls = kBackground;
  int lane = -1;
};

Marking classify(const SceneConfig& cfg, double x, double z) {
  if (z <= 0.0 || z > cfg.max_range) return {};
  const double half = 0.5 * cfg.marking_width;
  const double period = cfg.dash_length + cfg.gap_length;
  for (int k = 0; k < cfg.lane_count; ++k) {
    if (std::abs(x - cfg.lane_x(k, z)) > half) continue;
    const bool solid = k == 0 || k == cfg.lane_count - 1;
    if (solid || std::fmod(z + cfg.dash_phase, period) < cfg.dash_length) {
      return {kLaneLine, k};
    }
  }
  const double centre = -cfg.lateral_offset + cfg.curvature * z * z;
  const double u = x - centre;
  const double inner = 0.5 * (cfg.lane_count - 1) * cfg.lane_spacing;
  if (cfg.stop_line && z >= cfg.stop_line_distance && z <= cfg.stop_line_distance + cfg.stop_line_depth &&
      std::abs(u) <= inner) {
    return {kStopLine, -1};
  }
  if (cfg.arrows && z >= cfg.arrow_distance && z <= cfg.arrow_distance + 3.0) {
    for (int j = 0; j + 1 < cfg.lane_count; ++j) {
      const double uc = (j + 0.5 - 0.5 * (cfg.lane_count - 1)) * cfg.lane_spacing;
      const double du = std::abs(u - uc);
      const double along = z - cfg.arrow_distance;
      if ((along <= 2.0 && du <= 0.15) || (along > 2.0 && du <= 0.5 * (3.0 - along))) {
        return {kArrow, -1};
      }
    }
  }
  return {};
}

std::array<double, 3> surface_color(const SceneConfig& cfg, double x, double z, int cls) {
  if (cls != kBackground) return kPaint;
  const double centre = -cfg.lateral_offset + cfg.curvature * z * z;
  const double road_half = 0.5 * (cfg.lane_count - 1) * cfg.lane_spacing + 0.6;
  return std::abs(x - centre) <= road_half ? kRoad : kGrass;
}

// Row-crossing range of lane k, found by bisection on the monotone
// projected row over [0.2 m, max_range].
std::optional<double> lane_range_at_row(const SceneConfig& cfg, int k, double row) {
  auto row_of = [&](double z) { return cfg.camera.project(cfg.lane_x(k, z), z).y(); };
  double lo = 0.2, hi = cfg.max_range;
  double f_lo = row_of(lo) - row, f_hi = row_of(hi) - row;
  if (f_lo == 0.0) return lo;
  if (f_lo * f_hi > 0.0) return std::nullopt;
  for (int i = 0; i < 200 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double f_mid = row_of(mid) - row;
    if ((f_mid < 0.0) == (f_lo < 0.0)) {
      lo = mid;
      f_lo = f_mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

SceneSample render_scene(const SceneConfig& cfg) {
  cfg.validate();
  const int w = cfg.camera.view.width;
  const int h = cfg.camera.view.height;
  const int ss = cfg.supersampling;
  const int half_count = (ss * ss + 1) / 2;
  const Mat3 cam_to_world = cfg.camera.world_to_camera().transpose();
  const Mat3 kinv = cfg.camera.view.intrinsics.inverse();

  SceneSample out{warp::FeatureMap(warp::Shape3{3, h, w}),
                  LabelMap(h, w),
                  LabelMap(h, w),
                  {},
                  cfg.camera.horizon(),
                  cfg.camera.bev_homography(cfg.camera.keypoints())};

  std::vector<int> lane_hits(static_cast<std::size_t>(cfg.lane_count));
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      std::array<double, 3> colour{0, 0, 0};
      std::array<int, kClassCount> class_hits{};
      std::fill(lane_hits.begin(), lane_hits.end(), 0);
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double u = px + (sx + 0.5) / ss - 0.5;
          const double v = py + (sy + 0.5) / ss - 0.5;
          const Vec3 d = cam_to_world * (kinv * Vec3(u, v, 1.0));
          std::array<double, 3> c;
          if (d.y() <= 1e-12) {
            c = kSky;
          } else {
            const double t = cfg.camera.height / d.y();
            const double gx = t * d.x(), gz = t * d.z();
            const Marking m = classify(cfg, gx, gz);
            ++class_hits[static_cast<std::size_t>(m.cls)];
            if (m.lane >= 0) ++lane_hits[static_cast<std::size_t>(m.lane)];
            c = surface_color(cfg, gx, gz, m.cls);
            // Fade distant ground towards the sky colour.
            const double haze = std::clamp(gz / 400.0, 0.0, 0.6);
            for (int k = 0; k < 3; ++k) c[k] = (1 - haze) * c[k] + haze * kSky[k];
          }
          for (int k = 0; k < 3; ++k) colour[k] += c[k];
        }
      }
      for (int k = 0; k < 3; ++k) out.image.at(k, py, px) = colour[k] / (ss * ss);

      int best = kBackground;
      for (int c = 1; c < kClassCount; ++c) {
        if (class_hits[c] >= half_count && class_hits[c] > class_hits[best]) best = c;
      }
      out.semantic.at(py, px) = best;
      if (best == kLaneLine) {
        const auto it = std::max_element(lane_hits.begin(), lane_hits.end());
        out.instance.at(py, px) = static_cast<int>(it - lane_hits.begin()) + 1;
      }
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : out.image.values) {
    v *= cfg.brightness;
    if (cfg.noise > 0.0) v += cfg.noise * gauss(rng);
  }
  for (double& v : out.image.values) {
    v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  }

  bool any_lane = false;
  for (int v : out.semantic.values) any_lane = any_lane || v == kLaneLine;
  if (!any_lane) throw Error(ErrorCode::DegenerateGeometry, "no lane marking is visible");

  // Lane points: the analytic lane position on each sampled row, kept only
  // where the rendered instance mask is within one pixel.
  out.lanes.h_samples = default_h_samples(h);
  for (int k = 0; k < cfg.lane_count; ++k) {
    std::vector<double> xs;
    bool visible = false;
    for (int row : out.lanes.h_samples) {
      double x = tusimple::kAbsent;
      if (const auto z = lane_range_at_row(cfg, k, row)) {
        const double lx = cfg.camera.project(cfg.lane_x(k, *z), *z).x();
        if (lx >= 0.0 && lx <= w - 1.0) {
          const int cx = static_cast<int>(std::lround(lx));
          bool near = false;
          for (int yy = std::max(0, row - 1); yy <= std::min(h - 1, row + 1) && !near; ++yy) {
            for (int xx = std::max(0, cx - 1); xx <= std::min(w - 1, cx + 1); ++xx) {
              if (out.instance.at(yy, xx) == k + 1 && std::abs(xx - lx) <= 1.0) near = true;
            }
          }
          if (near) x = lx;
        }
      }
      visible = visible || x != tusimple::kAbsent;
      xs.push_back(x);
    }
    if (visible) out.lanes.lanes.push_back(std::move(xs));
  }
  return out;
}

}  // namespace ptseg::scene
