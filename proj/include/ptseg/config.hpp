#pragma once

// Run configuration: an INI file with top-level `seed` and `output` and the
// sections [camera], [chain], [network], [data], [train], [eval]. Unknown keys
// are rejected. `section.key=value` overrides are applied on top of the file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ptseg/autodiff.hpp"
#include "ptseg/eval.hpp"
#include "ptseg/geometry.hpp"
#include "ptseg/scene.hpp"

namespace ptseg::config {

struct ChainSettings {
  std::optional<geometry::HorizonLine> horizon;
  std::vector<geometry::Vec3> keypoints;  // empty: derived from the camera
  int steps = 3;
  std::vector<int> widths;                // empty: halve per step
};

struct NetworkSettings {
  int depth = 3;
  int base_channels = 16;
  int classes = 2;
  bool instance_head = true;
  int embedding_dims = 4;
  double delta_v = 0.5;
  double delta_d = 3.0;
  double lambda = 1.0;
  std::vector<double> class_weights;
};

struct DataSettings {
  std::filesystem::path dir;  // empty: <run dir>/data
  std::size_t count = 200;
  std::size_t holdout = 40;   // last samples, kept out of training
  scene::DatasetConfig scene;
};

struct TrainSettings {
  int steps = 1200;
  int batch_size = 2;
  ad::AdamOptions adam{1e-3};
  bool no_ptl = false;
  bool overfit = false;       // train on the first sample only
};

struct EvalSettings {
  eval::LaneOptions lanes;
  eval::BinUnit bins = eval::BinUnit::Pixels;
  double pixel_bin_width = 32.0;
  double meter_bin_width = 5.0;
  int bin_count = 4;
  bool under_horizon = false;
  int min_lane_pixels = 10;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output = "runs";
  scene::CameraRig camera;
  ChainSettings chain;
  NetworkSettings network;
  DataSettings data;
  TrainSettings train;
  EvalSettings eval;
  std::string source_text;  // INI text after overrides, for hashing

  /// Key points from the config, or the camera's default ground box.
  std::vector<geometry::Vec3> keypoints() const;
  /// Per-step widths from the config, or halving from the image width.
  std::vector<int> widths() const;
  /// Throws ConfigError("chain.horizon") when no horizon is given.
  const geometry::HorizonLine& require_horizon() const;
  /// First 8 hex digits of a 64-bit FNV-1a hash of `source_text`.
  std::string hash() const;
};

/// Parses INI text; overrides are "section.key=value" or "key=value".
RunConfig parse(const std::string& text, const std::vector<std::string>& overrides = {});
/// Reads `path` (ConfigError("config") when unreadable) and parses it.
RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace ptseg::config
