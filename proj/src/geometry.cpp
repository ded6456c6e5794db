#include "ptseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ptseg/error.hpp"

namespace ptseg::geometry {
namespace {

constexpr double kOrthoTol = 1e-9;
constexpr double kFrontTol = 1e-6;

Mat3 hat(const Vec3& v) {
  Mat3 k;
  k << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return k;
}

bool all_finite(const Mat3& m) { return m.allFinite(); }

}  // namespace

RotationMatrix::RotationMatrix(const Mat3& m) : m_(m) {
  if (!all_finite(m)) {
    throw Error(ErrorCode::InvalidArgument, "rotation has non-finite entries");
  }
  const double ortho = (m.transpose() * m - Mat3::Identity()).norm();
  const double det = m.determinant();
  if (ortho > kOrthoTol || std::abs(det - 1.0) > kOrthoTol) {
    throw Error(ErrorCode::InvalidArgument,
                "matrix is not a proper rotation (orthogonality residual " +
                    std::to_string(ortho) + ", det " + std::to_string(det) + ")");
  }
}

void CameraIntrinsics::validate() const {
  if (!(f > 0.0) || !std::isfinite(f) || !std::isfinite(cx) || !std::isfinite(cy)) {
    throw Error(ErrorCode::InvalidArgument, "intrinsics need finite f > 0 and finite principal point");
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << f, 0.0, cx,
       0.0, f, cy,
       0.0, 0.0, 1.0;
  return k;
}

Mat3 CameraIntrinsics::inverse() const {
  Mat3 k;
  k << 1.0 / f, 0.0, -cx / f,
       0.0, 1.0 / f, -cy / f,
       0.0, 0.0, 1.0;
  return k;
}

Vec3 CameraIntrinsics::unproject(double x, double y) const {
  return {(x - cx) / f, (y - cy) / f, 1.0};
}

void GroundPlane::validate() const {
  if (std::abs(normal.norm() - 1.0) > 1e-12 || !(distance > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "ground plane needs a unit normal and positive distance");
  }
}

void ViewSpec::validate() const {
  intrinsics.validate();
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::InvalidArgument, "view dimensions must be positive");
  }
}

Mat3 normalize_projective(const Mat3& m) {
  const double norm = m.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::SingularHomography, "cannot normalize a zero or non-finite matrix");
  }
  Mat3 out = m / norm;
  double pivot = out(2, 2);
  if (pivot == 0.0) {
    // Fall back to the largest-magnitude entry for the sign.
    Eigen::Index r = 0, c = 0;
    out.cwiseAbs().maxCoeff(&r, &c);
    pivot = out(r, c);
  }
  if (pivot < 0.0) out = -out;
  return out;
}

double projective_distance(const Mat3& a, const Mat3& b) {
  const Mat3 na = normalize_projective(a);
  const Mat3 nb = normalize_projective(b);
  return std::min((na - nb).norm(), (na + nb).norm());
}

Homography::Homography(const Mat3& m, ViewSpec source, ViewSpec target)
    : source_(source), target_(target) {
  source_.validate();
  target_.validate();
  if (!all_finite(m)) {
    throw Error(ErrorCode::SingularHomography, "homography has non-finite entries");
  }
  m_ = normalize_projective(m);
  if (std::abs(m_.determinant()) <= 1e-12) {
    throw Error(ErrorCode::SingularHomography, "homography is singular");
  }
}

Homography Homography::identity(const ViewSpec& view) {
  return Homography(Mat3::Identity(), view, view);
}

Eigen::Vector2d Homography::transfer(double x, double y) const {
  const Vec3 p = m_ * Vec3(x, y, 1.0);
  return {p.x() / p.z(), p.y() / p.z()};
}

Homography Homography::inverse() const { return Homography(m_.inverse(), target_, source_); }

Homography Homography::after(const Homography& first) const {
  return Homography(m_ * first.m_, first.source_, target_);
}

KeyPointSet::KeyPointSet(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.size() < 3) {
    throw Error(ErrorCode::InvalidArgument, "key-point set needs at least 3 points");
  }
  for (const auto& p : points_) {
    if (!p.allFinite()) throw Error(ErrorCode::InvalidArgument, "key point is not finite");
  }
}

Mat3 PTLChain::composed() const {
  Mat3 product = Mat3::Identity();
  for (const auto& step : steps) product = step.homography.matrix() * product;
  return normalize_projective(product);
}

double PTLChain::composition_residual() const {
  return projective_distance(composed(), integral.matrix());
}

void PTLChain::validate() const {
  if (steps.empty()) {
    if (!(integral.source() == integral.target())) {
      throw Error(ErrorCode::InvalidArgument, "empty chain must map a view onto itself");
    }
    return;
  }
  if (!(steps.front().homography.source() == integral.source()) ||
      !(steps.back().homography.target() == integral.target())) {
    throw Error(ErrorCode::InvalidArgument, "chain endpoints disagree with integral viewports");
  }
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    if (!(steps[i].homography.target() == steps[i + 1].homography.source())) {
      throw Error(ErrorCode::InvalidArgument,
                  "step " + std::to_string(i) + " target viewport differs from next source");
    }
  }
  const double residual = composition_residual();
  if (residual > 1e-9) {
    throw Error(ErrorCode::InvalidArgument,
                "composition residual " + std::to_string(residual) + " exceeds 1e-9");
  }
}

Vec3 horizon_to_ground_normal(const Vec3& p_left, const Vec3& p_right) {
  const Vec3 c = p_left.cross(p_right);
  const double norm = c.norm();
  if (!(norm > 1e-12)) {
    throw Error(ErrorCode::DegenerateHorizon, "horizon directions are parallel");
  }
  return c / norm;
}

Vec3 ground_normal_to_axis_angle(const Vec3& n) {
  if (std::abs(n.norm() - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "ground normal must be a unit vector");
  }
  const Vec3 e3 = Vec3::UnitZ();
  const Vec3 c = e3.cross(n);
  const double s = c.norm();
  const double cos_angle = e3.dot(n);
  if (s == 0.0 || (s < 1e-12 && cos_angle < 0.0)) {
    if (cos_angle > 0.0) return Vec3::Zero();
    throw Error(ErrorCode::AmbiguousAxis, "normal points away from the ground (n = -e3)");
  }
  return c * (std::atan2(s, cos_angle) / s);
}

RotationMatrix axis_angle_to_rotation(const Vec3& omega) {
  if (!omega.allFinite()) throw Error(ErrorCode::InvalidArgument, "rotation vector is not finite");
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b;
  if (theta < 1e-5) {
    // Taylor expansions of sin(t)/t and (1 - cos t)/t^2.
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const Mat3 k = hat(omega);
  return RotationMatrix(Mat3::Identity() + a * k + b * k * k);
}

Vec3 rotation_to_axis_angle(const RotationMatrix& r) {
  const Eigen::AngleAxisd aa(r.matrix());
  return aa.axis() * aa.angle();
}

std::vector<RotationMatrix> split_rotation(const Vec3& omega, int steps) {
  if (steps < 1) throw Error(ErrorCode::InvalidStepCount, "step count must be >= 1");
  const RotationMatrix part = axis_angle_to_rotation(omega / static_cast<double>(steps));
  return std::vector<RotationMatrix>(static_cast<std::size_t>(steps), part);
}

Homography pure_rotation_homography(const ViewSpec& source, const ViewSpec& target,
                                    const RotationMatrix& r) {
  return Homography(target.intrinsics.matrix() * r.matrix() * source.intrinsics.inverse(),
                    source, target);
}

Homography plane_induced_homography(const ViewSpec& source, const ViewSpec& target,
                                    const RotationMatrix& r, const Vec3& t,
                                    const GroundPlane& plane) {
  plane.validate();
  const Mat3 core = r.matrix() - t * plane.normal.transpose() / plane.distance;
  const Eigen::JacobiSVD<Mat3> svd(core);
  const auto& sv = svd.singularValues();
  if (!(sv(2) > 1e-12 * sv(0))) {
    throw Error(ErrorCode::SingularHomography, "plane-induced factor is rank deficient");
  }
  return Homography(target.intrinsics.matrix() * core * source.intrinsics.inverse(), source,
                    target);
}

Viewport optimal_viewport(const CameraIntrinsics& k_i, const RotationMatrix& r,
                          const KeyPointSet& keypoints, int target_width) {
  k_i.validate();
  if (target_width < 1) throw Error(ErrorCode::InvalidArgument, "target width must be >= 1");
  const Mat3 to_next = r.matrix() * k_i.inverse();

  double left = std::numeric_limits<double>::infinity();
  double top = left;
  double right = -left;
  double bottom = -left;
  for (const auto& p : keypoints.points()) {
    const Vec3 q = to_next * p;
    if (!(q.z() > kFrontTol)) {
      throw Error(ErrorCode::KeyPointBehindCamera,
                  "key point lands behind the rotated camera (z = " + std::to_string(q.z()) + ")");
    }
    const double x = q.x() / std::abs(q.z());
    const double y = q.y() / std::abs(q.z());
    left = std::min(left, x);
    right = std::max(right, x);
    top = std::min(top, y);
    bottom = std::max(bottom, y);
  }
  const double bb_width = right - left;
  const double bb_height = bottom - top;
  if (bb_width < 1e-9 || bb_height < 1e-9) {
    throw Error(ErrorCode::EmptyBoundingBox, "key-point bounding box is degenerate");
  }

  Viewport out;
  out.intrinsics.f = static_cast<double>(target_width) / bb_width;
  out.intrinsics.cx = -out.intrinsics.f * left;
  out.intrinsics.cy = -out.intrinsics.f * top;
  // Round up so no key point is cropped; absorb floating noise on exact sizes.
  out.height = std::max(1, static_cast<int>(std::ceil(out.intrinsics.f * bb_height - 1e-9)));
  return out;
}

std::vector<Vec3> transfer_keypoints(const CameraIntrinsics& k_i, const RotationMatrix& r,
                                     const CameraIntrinsics& k_next,
                                     const std::vector<Vec3>& points) {
  const Mat3 m = k_next.matrix() * r.matrix() * k_i.inverse();
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const Vec3 q = m * p;
    out.emplace_back(q.x() / std::abs(q.z()), q.y() / std::abs(q.z()), 1.0);
  }
  return out;
}

PTLChain build_ptl_chain(const ViewSpec& view0, const HorizonLine& horizon,
                         const KeyPointSet& keypoints, int steps,
                         const std::vector<int>& target_widths) {
  view0.validate();
  if (steps < 1) throw Error(ErrorCode::InvalidStepCount, "step count must be >= 1");
  if (target_widths.size() != static_cast<std::size_t>(steps)) {
    throw Error(ErrorCode::InvalidArgument, "need one target width per step");
  }
  const auto& k0 = view0.intrinsics;
  const Vec3 left = k0.inverse() * horizon.left;
  const Vec3 right = k0.inverse() * horizon.right;
  const Vec3 normal = horizon_to_ground_normal(left, right);
  // omega rotates the camera so its optical axis meets the ground normal;
  // scene points transform by the opposite rotation.
  const Vec3 omega = ground_normal_to_axis_angle(normal);
  const auto rotations = split_rotation(-omega, steps);

  PTLChain chain{{}, Homography::identity(view0)};
  ViewSpec current = view0;
  std::vector<Vec3> points = keypoints.points();
  Mat3 product = Mat3::Identity();
  for (int i = 0; i < steps; ++i) {
    const auto& r = rotations[static_cast<std::size_t>(i)];
    const Viewport vp = optimal_viewport(current.intrinsics, r, KeyPointSet(points),
                                         target_widths[static_cast<std::size_t>(i)]);
    const ViewSpec next{vp.intrinsics, target_widths[static_cast<std::size_t>(i)], vp.height};
    points = transfer_keypoints(current.intrinsics, r, next.intrinsics, points);
    Homography h = pure_rotation_homography(current, next, r);
    product = h.matrix() * product;
    chain.steps.push_back({r, std::move(h)});
    current = next;
  }
  chain.integral = Homography(product, view0, current);
  return chain;
}

PTLChain invert_chain(const PTLChain& chain) {
  PTLChain out{{}, chain.integral.inverse()};
  out.steps.reserve(chain.steps.size());
  for (auto it = chain.steps.rbegin(); it != chain.steps.rend(); ++it) {
    out.steps.push_back({it->rotation.transpose(), it->homography.inverse()});
  }
  return out;
}

PTLChain empty_chain(const ViewSpec& view) { return PTLChain{{}, Homography::identity(view)}; }

}  // namespace ptseg::geometry

namespace ptseg::geometry {

PTLChain ChainSpec::build() const {
  if (steps == 0) return empty_chain(view);
  return build_ptl_chain(view, horizon, KeyPointSet(keypoints), steps, widths);
}

}  // namespace ptseg::geometry
