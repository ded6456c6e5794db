#pragma once

// Lane-benchmark metrics: TuSimple point accuracy and FP/FN, per-class IoU,
// distance-binned variants and the under-horizon filter.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ptseg/geometry.hpp"
#include "ptseg/label_map.hpp"
#include "ptseg/tusimple.hpp"

namespace ptseg::eval {

struct LaneOptions {
  double threshold = 20.0;         // a point is correct when |dx| < threshold
  double lane_match_ratio = 0.85;  // matched lanes need this fraction of correct points
};

struct ImageCounts {
  int correct = 0;        // C_im
  int total = 0;          // S_im: valid ground-truth points
  int predicted = 0;      // N_pred
  int false_pred = 0;     // F_pred
  int ground_truth = 0;   // N_gt (lanes with at least one valid point)
  int missed = 0;         // M_pred
};

/// One-to-one lane pairing for a single image, with per-point correctness.
struct ImageMatch {
  ImageCounts counts;
  std::vector<int> gt_for_pred;                 // -1 when unpaired
  std::vector<std::vector<bool>> point_correct;  // [gt lane][row], false for invalid rows
};

/// Greedy matching by descending correct-point count; ties go to the lowest
/// ground-truth index, then the lexicographically smallest prediction.
ImageMatch match_lanes(const tusimple::Record& pred, const tusimple::Record& gt,
                       const LaneOptions& options);

struct AccuracyResult {
  double accuracy = 0.0;  // mean over images with S_im > 0 of C_im / S_im
  int images = 0;         // images that contributed
  std::vector<ImageCounts> per_image;
};

AccuracyResult tusimple_accuracy(const std::vector<tusimple::Record>& preds,
                                 const std::vector<tusimple::Record>& gts,
                                 const LaneOptions& options = {});

struct FpFn {
  double fp = 0.0;
  double fn = 0.0;
};

FpFn tusimple_fp_fn(const std::vector<tusimple::Record>& preds,
                    const std::vector<tusimple::Record>& gts, const LaneOptions& options = {});

struct IouResult {
  std::vector<double> iou;         // per class; NaN when the union is empty
  std::vector<long> intersection;
  std::vector<long> union_count;
  double miou = 0.0;               // over classes with a non-empty union
};

/// `classes` lists the class ids to score; pixels whose ground truth equals
/// `ignore` are skipped.
IouResult miou(const LabelMap& pred, const LabelMap& gt, const std::vector<int>& classes,
               int ignore = -1);
/// Pools intersections and unions over several images.
IouResult miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
               const std::vector<int>& classes, int ignore = -1);

// Distance bins.

enum class BinUnit { Pixels, Meters };

/// Bins [edges[i], edges[i+1]) with the last one open-ended. Pixel distance
/// is H - 1 - row; metric distance is the ground range of the pixel.
struct BinSpec {
  BinUnit unit = BinUnit::Pixels;
  std::vector<double> edges{0.0};

  static BinSpec uniform(BinUnit unit, double width, int count);
  void validate() const;
  /// Bin index for a distance, or -1 when below the first edge.
  int bin_of(double distance) const;
};

/// Camera geometry for metric bins.
struct GroundGeometry {
  geometry::CameraIntrinsics intrinsics;
  geometry::GroundPlane plane;

  /// Distance along the ground from the camera's foot point to the ground
  /// point seen at (x, y); empty at or above the horizon.
  std::optional<double> ground_range(double x, double y) const;
};

struct DistanceBins {
  BinSpec spec;
  std::vector<double> metric;  // NaN when the bin has no support
  std::vector<long> support;

  long total_support() const;
};

/// Point accuracy per bin: the mean, over images with support in the bin, of
/// correct / support, so a single bin spanning every distance reproduces
/// tusimple_accuracy. Each valid ground-truth point lands in the bin of its
/// (x, row); correctness comes from the image-level lane matching.
DistanceBins binned_accuracy(const std::vector<tusimple::Record>& preds,
                             const std::vector<tusimple::Record>& gts, int image_height,
                             const BinSpec& bins, const LaneOptions& options = {},
                             const std::optional<GroundGeometry>& geometry = std::nullopt);

/// mIoU per bin over the pixels of each bin (pooled over images).
DistanceBins binned_miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                         const std::vector<int>& classes, const BinSpec& bins, int ignore = -1,
                         const std::optional<GroundGeometry>& geometry = std::nullopt);

// Under-horizon filter.

/// Ground-truth points on rows above `horizon_row` become absent.
tusimple::Record under_horizon(const tusimple::Record& gt, double horizon_row);
/// Ground-truth pixels on rows above `horizon_row` become `ignore`.
LabelMap under_horizon(const LabelMap& gt, double horizon_row, int ignore);

// Reports.

void write_bins_csv(const std::filesystem::path& path, const DistanceBins& bins);
void write_summary(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& entries);

}  // namespace ptseg::eval
