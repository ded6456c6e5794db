#pragma once

// Camera geometry for consecutive perspective transforms: pinhole intrinsics,
// axis-angle rotations, plane-induced homographies, key-point viewports and
// the chain of pure-rotation steps that walks a front view into a
// bird's-eye view.
//
// Conventions: camera x right, y down, z forward. Pixel (row i, col j) sits at
// continuous coordinate (x = j, y = i). A Homography maps source pixels to
// target pixels and is stored normalized (unit Frobenius norm, non-negative
// bottom-right entry).

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace ptseg::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Orthonormal 3x3 matrix with det = +1 (checked on construction).
class RotationMatrix {
 public:
  RotationMatrix() : m_(Mat3::Identity()) {}
  explicit RotationMatrix(const Mat3& m);

  const Mat3& matrix() const { return m_; }
  RotationMatrix transpose() const { return RotationMatrix(m_.transpose(), Unchecked{}); }
  RotationMatrix operator*(const RotationMatrix& other) const {
    return RotationMatrix(m_ * other.m_, Unchecked{});
  }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

 private:
  struct Unchecked {};
  RotationMatrix(const Mat3& m, Unchecked) : m_(m) {}
  Mat3 m_;
};

/// Single isotropic focal length and principal point, in pixels.
struct CameraIntrinsics {
  double f = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const;
  Mat3 matrix() const;
  Mat3 inverse() const;

  /// K^-1 (x, y, 1): the camera-frame direction through a pixel.
  Vec3 unproject(double x, double y) const;

  bool operator==(const CameraIntrinsics&) const = default;
};

struct GroundPlane {
  Vec3 normal;  // unit, pointing at the ground
  double distance = 1.0;

  void validate() const;
};

/// Intrinsics plus pixel extent of a (virtual) view.
struct ViewSpec {
  CameraIntrinsics intrinsics;
  int width = 1;
  int height = 1;

  void validate() const;
  bool operator==(const ViewSpec&) const = default;
};

/// Scale the 3x3 matrix to unit Frobenius norm with a non-negative (2,2) entry.
Mat3 normalize_projective(const Mat3& m);

/// Relative Frobenius distance between two projective matrices after
/// normalizing both.
double projective_distance(const Mat3& a, const Mat3& b);

class Homography {
 public:
  Homography(const Mat3& m, ViewSpec source, ViewSpec target);

  static Homography identity(const ViewSpec& view);

  const Mat3& matrix() const { return m_; }
  const ViewSpec& source() const { return source_; }
  const ViewSpec& target() const { return target_; }

  /// Maps a source pixel to the target view; returns the homogeneous result.
  Vec3 apply(const Vec3& p) const { return m_ * p; }
  /// Maps (x, y) and dehomogenizes.
  Eigen::Vector2d transfer(double x, double y) const;

  Homography inverse() const;

  /// this ∘ first: apply `first`, then this.
  Homography after(const Homography& first) const;

 private:
  Mat3 m_;
  ViewSpec source_;
  ViewSpec target_;
};

/// Ordered homogeneous pixel points (x, y, 1) outlining the ground region.
class KeyPointSet {
 public:
  explicit KeyPointSet(std::vector<Vec3> points);

  const std::vector<Vec3>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<Vec3> points_;
};

struct ChainStep {
  /// Point-coordinate rotation from view i to view i+1 (the R in K' R K^-1).
  RotationMatrix rotation;
  Homography homography;
};

struct PTLChain {
  std::vector<ChainStep> steps;
  Homography integral;

  std::size_t size() const { return steps.size(); }
  const ViewSpec& source() const { return integral.source(); }
  const ViewSpec& target() const { return integral.target(); }

  /// Normalized ordered product of the step homographies.
  Mat3 composed() const;
  /// Relative Frobenius error between composed() and integral.
  double composition_residual() const;
  /// Throws if viewports do not link up or composition drifts beyond 1e-9.
  void validate() const;
};

// Horizon and rotation.

/// Unit ground normal from two camera-frame horizon directions (left, right).
Vec3 horizon_to_ground_normal(const Vec3& p_left, const Vec3& p_right);

/// Axis-angle vector whose rotation carries e3 onto `n`.
Vec3 ground_normal_to_axis_angle(const Vec3& n);

/// Rodrigues' formula.
RotationMatrix axis_angle_to_rotation(const Vec3& omega);

/// Rotation vector of R (inverse of axis_angle_to_rotation for angles < pi).
Vec3 rotation_to_axis_angle(const RotationMatrix& r);

/// N equal rotations about the axis of `omega` whose product is exp(omega).
std::vector<RotationMatrix> split_rotation(const Vec3& omega, int steps);

// Homographies.

Homography pure_rotation_homography(const ViewSpec& source, const ViewSpec& target,
                                    const RotationMatrix& r);

Homography plane_induced_homography(const ViewSpec& source, const ViewSpec& target,
                                    const RotationMatrix& r, const Vec3& t,
                                    const GroundPlane& plane);

// Viewports.

struct Viewport {
  CameraIntrinsics intrinsics;
  int height = 1;
};

/// Smallest viewport of width `target_width` containing every key point after
/// rotating view i by `r`.
Viewport optimal_viewport(const CameraIntrinsics& k_i, const RotationMatrix& r,
                          const KeyPointSet& keypoints, int target_width);

/// Key points expressed in the next view's pixel frame.
std::vector<Vec3> transfer_keypoints(const CameraIntrinsics& k_i, const RotationMatrix& r,
                                     const CameraIntrinsics& k_next,
                                     const std::vector<Vec3>& points);

struct HorizonLine {
  Vec3 left;   // homogeneous pixel (x, y, 1)
  Vec3 right;
};

/// Full pipeline: horizon -> ground normal -> integral rotation -> N even
/// steps -> per-step viewports -> step homographies.
PTLChain build_ptl_chain(const ViewSpec& view0, const HorizonLine& horizon,
                         const KeyPointSet& keypoints, int steps,
                         const std::vector<int>& target_widths);

/// Decoder-side chain: steps reversed and inverted, viewports swapped.
PTLChain invert_chain(const PTLChain& chain);

/// Identity chain with zero steps over `view`.
PTLChain empty_chain(const ViewSpec& view);

/// Everything build_ptl_chain needs, kept so a chain can be rebuilt exactly.
struct ChainSpec {
  ViewSpec view;
  HorizonLine horizon;
  std::vector<Vec3> keypoints;
  int steps = 0;
  std::vector<int> widths;  // one per step

  /// build_ptl_chain, or the empty chain when steps == 0.
  PTLChain build() const;
};

}  // namespace ptseg::geometry
