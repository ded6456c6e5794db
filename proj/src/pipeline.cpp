#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "ptseg/error.hpp"
#include "ptseg/pipeline.hpp"

namespace ptseg::pipeline {

model::NetworkConfig network_config(const config::RunConfig& cfg, const scene::Manifest& manifest,
                                    bool no_ptl) {
  model::NetworkConfig n;
  const auto& s = cfg.network;
  n.depth = s.depth;
  n.base_channels = s.base_channels;
  n.classes = s.classes;
  n.instance_head = s.instance_head;
  n.embedding_dims = s.embedding_dims;
  n.delta_v = s.delta_v;
  n.delta_d = s.delta_d;
  n.instance_weight = s.lambda;
  n.class_weights = s.class_weights;
  n.input_channels = 3;
  const auto horizon = cfg.chain.horizon ? *cfg.chain.horizon : manifest.horizon;
  const auto keypoints = cfg.chain.keypoints.empty() ? manifest.keypoints : cfg.chain.keypoints;
  const int steps = no_ptl ? 0 : cfg.chain.steps;
  n.chain = model::network_chain(manifest.camera.view, horizon, keypoints, steps,
                                 no_ptl ? std::vector<int>{} : cfg.chain.widths);
  return n;
}

Predictions predict_samples(const model::PTSegModel& model,
                            const std::vector<const scene::SceneSample*>& samples,
                            int min_lane_pixels) {
  Predictions p;
  for (const auto* s : samples) {
    auto pr = model::predict(model, s->image);
    p.lanes.push_back(model::lanes_from_instances(pr.instance, s->lanes.h_samples, min_lane_pixels));
    p.lanes.back().raw_file = s->lanes.raw_file;
    p.semantic.push_back(std::move(pr.semantic));
    p.instance.push_back(std::move(pr.instance));
  }
  return p;
}

std::string unit_name(eval::BinUnit unit) { return unit == eval::BinUnit::Pixels ? "px" : "m"; }

eval::BinSpec bin_spec(const config::EvalSettings& s, eval::BinUnit unit) {
  return eval::BinSpec::uniform(unit,
                                unit == eval::BinUnit::Pixels ? s.pixel_bin_width : s.meter_bin_width,
                                s.bin_count);
}

Evaluation evaluate(const std::vector<tusimple::Record>& preds,
                    const std::vector<tusimple::Record>& gts,
                    const std::vector<LabelMap>* pred_masks, const std::vector<LabelMap>* gt_masks,
                    const scene::CameraRig& camera, const config::EvalSettings& settings,
                    eval::BinUnit unit, int classes) {
  Evaluation e;
  std::vector<tusimple::Record> gt = gts;
  std::vector<LabelMap> gt_m;
  e.has_masks = pred_masks != nullptr && gt_masks != nullptr;
  if (e.has_masks) gt_m = *gt_masks;
  if (settings.under_horizon) {
    // With roll the horizon is tilted; the lowest point of it bounds every column.
    e.horizon_row = std::max(camera.horizon_row(0.0), camera.horizon_row(camera.view.width - 1.0));
    for (auto& r : gt) r = eval::under_horizon(r, e.horizon_row);
    for (auto& m : gt_m) m = eval::under_horizon(m, e.horizon_row, -1);
  }
  e.accuracy = eval::tusimple_accuracy(preds, gt, settings.lanes);
  e.fp_fn = eval::tusimple_fp_fn(preds, gt, settings.lanes);
  const eval::GroundGeometry geo{camera.view.intrinsics, camera.ground_plane()};
  const auto spec = bin_spec(settings, unit);
  e.accuracy_bins = eval::binned_accuracy(preds, gt, camera.view.height, spec, settings.lanes, geo);
  if (e.has_masks) {
    std::vector<int> ids(static_cast<std::size_t>(classes));
    std::iota(ids.begin(), ids.end(), 0);
    e.iou = eval::miou(*pred_masks, gt_m, ids, -1);
    e.iou_bins = eval::binned_miou(*pred_masks, gt_m, ids, spec, -1, geo);
  }
  return e;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::map<std::string, std::string> summary(const Evaluation& e) {
  std::map<std::string, std::string> m{
      {"accuracy", format_double(e.accuracy.accuracy)},
      {"accuracy_images", std::to_string(e.accuracy.images)},
      {"fp", format_double(e.fp_fn.fp)},
      {"fn", format_double(e.fp_fn.fn)},
      {"bins_unit", unit_name(e.accuracy_bins.spec.unit)},
      {"accuracy_bin_support", std::to_string(e.accuracy_bins.total_support())},
  };
  if (e.horizon_row != 0.0) m["under_horizon_row"] = format_double(e.horizon_row);
  if (e.has_masks) {
    m["lane_iou"] = format_double(e.iou.iou.at(1));
    m["miou"] = format_double(e.iou.miou);
    m["miou_bin_support"] = std::to_string(e.iou_bins.total_support());
  }
  return m;
}

void write_report(const std::filesystem::path& dir, const Evaluation& e,
                  const std::map<std::string, std::string>& extra) {
  std::filesystem::create_directories(dir);
  auto s = summary(e);
  for (const auto& [k, v] : extra) s[k] = v;
  eval::write_summary(dir / "summary.txt", s);
  const std::string u = unit_name(e.accuracy_bins.spec.unit);
  eval::write_bins_csv(dir / ("accuracy_bins_" + u + ".csv"), e.accuracy_bins);
  if (e.has_masks) eval::write_bins_csv(dir / ("miou_bins_" + u + ".csv"), e.iou_bins);
}

}  // namespace ptseg::pipeline
