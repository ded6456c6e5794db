#pragma once

// Glue shared by the command line and the acceptance harness: network
// configuration from a run config, batch prediction, and evaluation reports.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ptseg/config.hpp"
#include "ptseg/eval.hpp"
#include "ptseg/model.hpp"
#include "ptseg/scene.hpp"

namespace ptseg::pipeline {

/// Network settings plus the chain: horizon and key points come from the
/// config when given, otherwise from the dataset manifest. `no_ptl` forces
/// zero steps.
model::NetworkConfig network_config(const config::RunConfig& cfg, const scene::Manifest& manifest,
                                    bool no_ptl);

struct Predictions {
  std::vector<tusimple::Record> lanes;
  std::vector<LabelMap> semantic;
  std::vector<LabelMap> instance;
};

Predictions predict_samples(const model::PTSegModel& model,
                            const std::vector<const scene::SceneSample*>& samples,
                            int min_lane_pixels);

struct Evaluation {
  eval::AccuracyResult accuracy;
  eval::FpFn fp_fn;
  bool has_masks = false;
  eval::IouResult iou;               // when masks are given
  eval::DistanceBins accuracy_bins;
  eval::DistanceBins iou_bins;       // when masks are given
  double horizon_row = 0.0;          // applied when under_horizon is set
};

/// Lane metrics, optional mask metrics over classes [0, classes), and distance bins in `unit`.
/// Meter bins use the camera's ground geometry.
Evaluation evaluate(const std::vector<tusimple::Record>& preds,
                    const std::vector<tusimple::Record>& gts,
                    const std::vector<LabelMap>* pred_masks, const std::vector<LabelMap>* gt_masks,
                    const scene::CameraRig& camera, const config::EvalSettings& settings,
                    eval::BinUnit unit, int classes = 2);

eval::BinSpec bin_spec(const config::EvalSettings& settings, eval::BinUnit unit);
std::string unit_name(eval::BinUnit unit);

/// summary entries (accuracy, fp, fn, lane_iou, miou, support counts).
std::map<std::string, std::string> summary(const Evaluation& e);

/// Writes summary.txt plus accuracy_bins_<unit>.csv and (with masks)
/// miou_bins_<unit>.csv under `dir`.
void write_report(const std::filesystem::path& dir, const Evaluation& e,
                  const std::map<std::string, std::string>& extra = {});

std::string format_double(double v);

}  // namespace ptseg::pipeline
