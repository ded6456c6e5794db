#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <tuple>

#include "ptseg/error.hpp"
#include "ptseg/eval.hpp"

namespace ptseg::eval {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Negative x marks an absent point (the benchmark writes -2).
bool present(double x) { return x >= 0.0; }

void check_rows(const tusimple::Record& pred, const tusimple::Record& gt) {
  if (pred.h_samples != gt.h_samples) {
    throw Error(ErrorCode::RowMismatch,
                "prediction rows differ from ground truth rows for '" + gt.raw_file + "'");
  }
  pred.validate();
  gt.validate();
}

void check_sizes(std::size_t preds, std::size_t gts) {
  if (preds != gts) {
    throw Error(ErrorCode::RowMismatch, std::to_string(preds) + " predictions for " +
                                            std::to_string(gts) + " ground-truth records");
  }
}

}  // namespace

ImageMatch match_lanes(const tusimple::Record& pred, const tusimple::Record& gt,
                       const LaneOptions& options) {
  check_rows(pred, gt);
  const std::size_t np = pred.lanes.size();
  const std::size_t ng = gt.lanes.size();
  const std::size_t rows = gt.h_samples.size();

  ImageMatch m;
  m.gt_for_pred.assign(np, -1);
  m.point_correct.assign(ng, std::vector<bool>(rows, false));
  m.counts.predicted = static_cast<int>(np);

  std::vector<int> valid(ng, 0);
  for (std::size_t g = 0; g < ng; ++g) {
    for (double x : gt.lanes[g]) valid[g] += present(x) ? 1 : 0;
    m.counts.total += valid[g];
    if (valid[g] > 0) ++m.counts.ground_truth;
  }

  auto hit = [&](std::size_t p, std::size_t g, std::size_t r) {
    const double gx = gt.lanes[g][r], px = pred.lanes[p][r];
    return present(gx) && present(px) && std::abs(px - gx) < options.threshold;
  };

  std::vector<std::tuple<int, std::size_t, std::size_t>> pairs;  // (-count, g, p)
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t g = 0; g < ng; ++g) {
      int c = 0;
      for (std::size_t r = 0; r < rows; ++r) c += hit(p, g, r) ? 1 : 0;
      if (c > 0) pairs.emplace_back(-c, g, p);
    }
  }
  // Ties on count go to the lowest gt index, then to the lexicographically
  // smallest prediction, so the outcome ignores the order of predictions.
  std::sort(pairs.begin(), pairs.end(), [&](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return pred.lanes[std::get<2>(a)] < pred.lanes[std::get<2>(b)];
  });

  std::vector<bool> gt_used(ng, false);
  std::vector<bool> gt_hit(ng, false);
  for (const auto& [neg, g, p] : pairs) {
    if (gt_used[g] || m.gt_for_pred[p] >= 0) continue;
    gt_used[g] = true;
    m.gt_for_pred[p] = static_cast<int>(g);
    m.counts.correct += -neg;
    for (std::size_t r = 0; r < rows; ++r) m.point_correct[g][r] = hit(p, g, r);
    gt_hit[g] = -neg >= options.lane_match_ratio * valid[g];
  }
  for (std::size_t p = 0; p < np; ++p) {
    const int g = m.gt_for_pred[p];
    if (g < 0 || !gt_hit[static_cast<std::size_t>(g)]) ++m.counts.false_pred;
  }
  for (std::size_t g = 0; g < ng; ++g) {
    if (valid[g] > 0 && !gt_hit[g]) ++m.counts.missed;
  }
  return m;
}

AccuracyResult tusimple_accuracy(const std::vector<tusimple::Record>& preds,
                                 const std::vector<tusimple::Record>& gts,
                                 const LaneOptions& options) {
  check_sizes(preds.size(), gts.size());
  AccuracyResult res;
  double sum = 0.0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const auto m = match_lanes(preds[i], gts[i], options);
    res.per_image.push_back(m.counts);
    if (m.counts.total == 0) continue;
    sum += static_cast<double>(m.counts.correct) / m.counts.total;
    ++res.images;
  }
  res.accuracy = res.images > 0 ? sum / res.images : 0.0;
  return res;
}

FpFn tusimple_fp_fn(const std::vector<tusimple::Record>& preds,
                    const std::vector<tusimple::Record>& gts, const LaneOptions& options) {
  check_sizes(preds.size(), gts.size());
  long f = 0, n_pred = 0, missed = 0, n_gt = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const auto c = match_lanes(preds[i], gts[i], options).counts;
    f += c.false_pred;
    n_pred += c.predicted;
    missed += c.missed;
    n_gt += c.ground_truth;
  }
  return {n_pred > 0 ? static_cast<double>(f) / n_pred : 0.0,
          n_gt > 0 ? static_cast<double>(missed) / n_gt : 0.0};
}

namespace {

void accumulate_iou(const LabelMap& pred, const LabelMap& gt, const std::vector<int>& classes,
                    int ignore, std::vector<long>& inter, std::vector<long>& uni) {
  if (pred.height != gt.height || pred.width != gt.width || pred.size() != gt.size()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and ground-truth masks differ in shape");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt.values[i];
    if (g == ignore) continue;
    const int p = pred.values[i];
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const bool in_p = p == classes[c], in_g = g == classes[c];
      inter[c] += (in_p && in_g) ? 1 : 0;
      uni[c] += (in_p || in_g) ? 1 : 0;
    }
  }
}

IouResult finish_iou(std::vector<long> inter, std::vector<long> uni) {
  IouResult r;
  double sum = 0.0;
  int n = 0;
  for (std::size_t c = 0; c < inter.size(); ++c) {
    if (uni[c] == 0) {
      r.iou.push_back(kNaN);
      continue;
    }
    r.iou.push_back(static_cast<double>(inter[c]) / static_cast<double>(uni[c]));
    sum += r.iou.back();
    ++n;
  }
  r.miou = n > 0 ? sum / n : kNaN;
  r.intersection = std::move(inter);
  r.union_count = std::move(uni);
  return r;
}

}  // namespace

IouResult miou(const LabelMap& pred, const LabelMap& gt, const std::vector<int>& classes,
               int ignore) {
  std::vector<long> inter(classes.size(), 0), uni(classes.size(), 0);
  accumulate_iou(pred, gt, classes, ignore, inter, uni);
  return finish_iou(std::move(inter), std::move(uni));
}

IouResult miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
               const std::vector<int>& classes, int ignore) {
  if (preds.size() != gts.size()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and ground-truth counts differ");
  }
  std::vector<long> inter(classes.size(), 0), uni(classes.size(), 0);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    accumulate_iou(preds[i], gts[i], classes, ignore, inter, uni);
  }
  return finish_iou(std::move(inter), std::move(uni));
}

BinSpec BinSpec::uniform(BinUnit unit, double width, int count) {
  if (!(width > 0.0) || count < 1) {
    throw Error(ErrorCode::InvalidArgument, "bins need a positive width and count");
  }
  BinSpec s;
  s.unit = unit;
  s.edges.clear();
  for (int i = 0; i < count; ++i) s.edges.push_back(i * width);
  return s;
}

void BinSpec::validate() const {
  if (edges.empty()) throw Error(ErrorCode::InvalidArgument, "bin spec has no edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) {
      throw Error(ErrorCode::InvalidArgument, "bin edges must be strictly increasing");
    }
  }
}

int BinSpec::bin_of(double d) const {
  if (!(d >= edges.front())) return -1;
  const auto it = std::upper_bound(edges.begin(), edges.end(), d);
  return static_cast<int>(it - edges.begin()) - 1;
}

std::optional<double> GroundGeometry::ground_range(double x, double y) const {
  const geometry::Vec3 ray = intrinsics.unproject(x, y);
  const double s = plane.normal.dot(ray);
  if (!(s > 1e-12)) return std::nullopt;
  const geometry::Vec3 p = (plane.distance / s) * ray;
  return (p - plane.distance * plane.normal).norm();
}

long DistanceBins::total_support() const {
  long t = 0;
  for (long s : support) t += s;
  return t;
}

namespace {

std::optional<double> distance_of(const BinSpec& bins, const std::optional<GroundGeometry>& geo,
                                  int image_height, double x, double row) {
  if (bins.unit == BinUnit::Pixels) return image_height - 1 - row;
  return geo->ground_range(x, row);
}

void require_geometry(const BinSpec& bins, const std::optional<GroundGeometry>& geo) {
  bins.validate();
  if (bins.unit == BinUnit::Meters && !geo) {
    throw Error(ErrorCode::MissingGeometry, "metric distance bins need camera geometry");
  }
}

}  // namespace

DistanceBins binned_accuracy(const std::vector<tusimple::Record>& preds,
                             const std::vector<tusimple::Record>& gts, int image_height,
                             const BinSpec& bins, const LaneOptions& options,
                             const std::optional<GroundGeometry>& geometry) {
  require_geometry(bins, geometry);
  check_sizes(preds.size(), gts.size());
  const std::size_t nb = bins.edges.size();
  DistanceBins out{bins, std::vector<double>(nb, 0.0), std::vector<long>(nb, 0)};
  std::vector<int> images(nb, 0);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const auto m = match_lanes(preds[i], gts[i], options);
    std::vector<long> correct(nb, 0), support(nb, 0);
    for (std::size_t g = 0; g < gts[i].lanes.size(); ++g) {
      for (std::size_t r = 0; r < gts[i].h_samples.size(); ++r) {
        const double x = gts[i].lanes[g][r];
        if (!present(x)) continue;
        const auto d = distance_of(bins, geometry, image_height, x, gts[i].h_samples[r]);
        if (!d) continue;
        const int b = bins.bin_of(*d);
        if (b < 0) continue;
        ++support[static_cast<std::size_t>(b)];
        if (m.point_correct[g][r]) ++correct[static_cast<std::size_t>(b)];
      }
    }
    for (std::size_t b = 0; b < nb; ++b) {
      if (support[b] == 0) continue;
      out.metric[b] += static_cast<double>(correct[b]) / static_cast<double>(support[b]);
      out.support[b] += support[b];
      ++images[b];
    }
  }
  for (std::size_t b = 0; b < nb; ++b) {
    out.metric[b] = images[b] > 0 ? out.metric[b] / images[b] : kNaN;
  }
  return out;
}

DistanceBins binned_miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                         const std::vector<int>& classes, const BinSpec& bins, int ignore,
                         const std::optional<GroundGeometry>& geometry) {
  require_geometry(bins, geometry);
  if (preds.size() != gts.size()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction and ground-truth counts differ");
  }
  const std::size_t nb = bins.edges.size();
  const std::size_t nc = classes.size();
  std::vector<long> inter(nb * nc, 0), uni(nb * nc, 0);
  DistanceBins out{bins, std::vector<double>(nb, kNaN), std::vector<long>(nb, 0)};
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const LabelMap& gt = gts[i];
    const LabelMap& pred = preds[i];
    if (pred.height != gt.height || pred.width != gt.width) {
      throw Error(ErrorCode::ShapeMismatch, "prediction and ground-truth masks differ in shape");
    }
    for (int y = 0; y < gt.height; ++y) {
      for (int x = 0; x < gt.width; ++x) {
        const int g = gt.at(y, x);
        if (g == ignore) continue;
        const auto d = distance_of(bins, geometry, gt.height, x, y);
        if (!d) continue;
        const int b = bins.bin_of(*d);
        if (b < 0) continue;
        ++out.support[static_cast<std::size_t>(b)];
        const int p = pred.at(y, x);
        for (std::size_t c = 0; c < nc; ++c) {
          const bool in_p = p == classes[c], in_g = g == classes[c];
          inter[b * nc + c] += (in_p && in_g) ? 1 : 0;
          uni[b * nc + c] += (in_p || in_g) ? 1 : 0;
        }
      }
    }
  }
  for (std::size_t b = 0; b < nb; ++b) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t c = 0; c < nc; ++c) {
      if (uni[b * nc + c] == 0) continue;
      sum += static_cast<double>(inter[b * nc + c]) / static_cast<double>(uni[b * nc + c]);
      ++n;
    }
    if (n > 0) out.metric[b] = sum / n;
  }
  return out;
}

tusimple::Record under_horizon(const tusimple::Record& gt, double horizon_row) {
  tusimple::Record out = gt;
  for (auto& lane : out.lanes) {
    for (std::size_t r = 0; r < lane.size(); ++r) {
      if (out.h_samples[r] < horizon_row) lane[r] = tusimple::kAbsent;
    }
  }
  return out;
}

LabelMap under_horizon(const LabelMap& gt, double horizon_row, int ignore) {
  LabelMap out = gt;
  for (int y = 0; y < out.height && y < horizon_row; ++y) {
    for (int x = 0; x < out.width; ++x) out.at(y, x) = ignore;
  }
  return out;
}

void write_bins_csv(const std::filesystem::path& path, const DistanceBins& bins) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << std::setprecision(10) << "bin_lo,bin_hi,metric,support\n";
  const auto& e = bins.spec.edges;
  for (std::size_t b = 0; b < e.size(); ++b) {
    out << e[b] << ',';
    if (b + 1 < e.size()) {
      out << e[b + 1];
    } else {
      out << "inf";
    }
    out << ',';
    if (std::isnan(bins.metric[b])) {
      out << "nan";
    } else {
      out << bins.metric[b];
    }
    out << ',' << bins.support[b] << '\n';
  }
}

void write_summary(const std::filesystem::path& path,
                   const std::map<std::string, std::string>& entries) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
}

}  // namespace ptseg::eval
