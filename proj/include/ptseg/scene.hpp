#pragma once

// Synthetic road scenes: a pinhole camera above a flat ground plane looking
// at painted lane lines, with exact masks, lane points and camera geometry.
//
// World frame: x right, y down, z forward along the road; the ground is the
// plane y = camera height. Lane line k follows X = offset_k + curvature * Z^2.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ptseg/geometry.hpp"
#include "ptseg/label_map.hpp"
#include "ptseg/tusimple.hpp"
#include "ptseg/warp.hpp"

namespace ptseg::scene {

enum SemanticClass : int { kBackground = 0, kLaneLine = 1, kStopLine = 2, kArrow = 3 };
inline constexpr int kClassCount = 4;

struct CameraRig {
  geometry::ViewSpec view{{64.0, 63.5, 63.5}, 128, 128};
  double height = 1.5;   // meters above the ground
  double pitch = 1.3613568165555772;  // optical axis to downward normal (78 deg)
  double roll = 0.0;

  void validate() const;
  geometry::Mat3 world_to_camera() const;
  /// Ground plane in camera coordinates (normal towards the ground).
  geometry::GroundPlane ground_plane() const;
  /// Pixel of a ground point (lateral X, forward Z).
  Eigen::Vector2d project(double x, double z) const;
  /// Ground point (X, Z) seen at a pixel, if the ray hits the ground ahead.
  std::optional<Eigen::Vector2d> ground_point(double px, double py) const;
  geometry::HorizonLine horizon() const;
  /// Horizon row at image column x.
  double horizon_row(double x) const;
  /// Bottom image corners plus ground points (+-half_width, far_z).
  geometry::KeyPointSet keypoints(double half_width = 7.0, double far_z = 20.0) const;
  /// Rotation into a camera looking straight down, with the tight viewport of
  /// the key points at the image width.
  geometry::Homography bev_homography(const geometry::KeyPointSet& keypoints) const;
};

struct SceneConfig {
  CameraRig camera;
  int lane_count = 4;            // painted lane lines
  double lane_spacing = 3.5;     // meters
  double marking_width = 0.3;    // meters
  double dash_length = 3.0;      // inner lines are dashed
  double gap_length = 5.0;
  double dash_phase = 0.0;
  double curvature = 0.0;        // X offset per Z^2
  double lateral_offset = 0.0;   // camera position relative to the road centre
  double max_range = 40.0;       // markings end here
  bool stop_line = false;
  double stop_line_distance = 8.0;
  double stop_line_depth = 1.2;  // thick enough to survive the 128 px raster
  bool arrows = false;
  double arrow_distance = 7.0;
  double brightness = 1.0;
  double noise = 0.0;            // per-pixel Gaussian sigma
  int supersampling = 4;         // per axis
  std::uint64_t seed = 0;

  void validate() const;
  /// Lateral position of lane line k at range z.
  double lane_x(int k, double z) const;
};

struct SceneSample {
  warp::FeatureMap image;   // [3, H, W], multiples of 1/255
  LabelMap semantic;
  LabelMap instance;        // 0 background, k + 1 for lane line k
  tusimple::Record lanes;
  geometry::HorizonLine horizon;
  geometry::Homography bev;

  bool operator==(const SceneSample& other) const;
};

/// Rows every 8 pixels from 40% of the image height down to the bottom.
std::vector<int> default_h_samples(int height);

SceneSample render_scene(const SceneConfig& cfg);

// Datasets.

struct DatasetConfig {
  SceneConfig base;
  double curvature_range = 0.0015;
  double lateral_range = 0.6;
  double brightness_range = 0.15;
  double noise = 0.02;
  double stop_line_probability = 0.0;
  double arrow_probability = 0.0;
  double keypoint_half_width = 7.0;
  double keypoint_range = 20.0;
};

/// Scene parameters for sample `index`, drawn from a generator seeded by
/// (seed, index) only.
SceneConfig sample_config(const DatasetConfig& cfg, std::uint64_t seed, std::size_t index);

struct Manifest {
  std::size_t count = 0;
  std::uint64_t seed = 0;
  CameraRig camera;
  geometry::HorizonLine horizon;
  std::vector<geometry::Vec3> keypoints;
  std::vector<std::string> image_files;

  geometry::KeyPointSet keypoint_set() const { return geometry::KeyPointSet(keypoints); }
};

struct Dataset {
  Manifest manifest;
  std::vector<SceneSample> samples;
};

/// Renders `count` scenes and writes images/, semantic/, instance/ PNGs,
/// labels.json (TuSimple lines) and manifest.txt under `dir`.
Dataset generate_dataset(const DatasetConfig& cfg, std::size_t count, std::uint64_t seed,
                         const std::filesystem::path& dir);

/// Renders the same samples as generate_dataset without touching the disk.
Dataset render_dataset(const DatasetConfig& cfg, std::size_t count, std::uint64_t seed);

Dataset load_dataset(const std::filesystem::path& dir);
Manifest load_manifest(const std::filesystem::path& dir);

}  // namespace ptseg::scene
