#include <algorithm>
#include <cmath>
#include <map>

#include "ptseg/error.hpp"
#include "ptseg/model.hpp"

namespace ptseg::model {

LabelMap cluster_embeddings(const ad::Tensor& embeddings, const LabelMap& mask, double delta_d) {
  if (embeddings.rank() != 3 || embeddings.dim(1) != mask.height ||
      embeddings.dim(2) != mask.width) {
    throw Error(ErrorCode::ShapeMismatch, "embeddings and mask differ in spatial shape");
  }
  const int dims = embeddings.dim(0);
  const std::size_t plane = mask.size();
  const auto e = embeddings.values();
  auto at = [&](std::size_t p, int k) { return e[static_cast<std::size_t>(k) * plane + p]; };

  std::vector<std::size_t> masked;
  for (std::size_t p = 0; p < plane; ++p) {
    if (mask.values[p] != 0) masked.push_back(p);
  }
  LabelMap out(mask.height, mask.width);
  std::vector<double> mean(static_cast<std::size_t>(dims)), next(mean.size());
  std::vector<std::size_t> members;
  int label = 0;
  for (std::size_t seed : masked) {
    if (out.values[seed] != 0) continue;
    for (int k = 0; k < dims; ++k) mean[k] = at(seed, k);
    for (int round = 0; round < 10; ++round) {
      members.clear();
      std::fill(next.begin(), next.end(), 0.0);
      for (std::size_t p : masked) {
        if (out.values[p] != 0) continue;
        double d2 = 0.0;
        for (int k = 0; k < dims; ++k) d2 += (at(p, k) - mean[k]) * (at(p, k) - mean[k]);
        if (d2 >= delta_d * delta_d) continue;
        members.push_back(p);
        for (int k = 0; k < dims; ++k) next[k] += at(p, k);
      }
      if (members.empty()) break;
      for (double& v : next) v /= static_cast<double>(members.size());
      if (next == mean) break;
      mean = next;
    }
    // The seed always joins so every round of the outer loop makes progress.
    if (std::find(members.begin(), members.end(), seed) == members.end()) members.push_back(seed);
    ++label;
    for (std::size_t p : members) out.values[p] = label;
  }
  return out;
}

Prediction predict(const PTSegModel& model, const warp::FeatureMap& image, int lane_class) {
  ad::Tape tape;
  const Outputs out = forward(tape, model, image_tensor(image));
  const int k = out.logits.dim(0), h = out.logits.dim(1), w = out.logits.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto l = out.logits.values();
  Prediction p{LabelMap(h, w), LabelMap(h, w)};
  LabelMap mask(h, w);
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (l[c * plane + i] > l[best * plane + i]) best = c;
    }
    p.semantic.values[i] = best;
    mask.values[i] = best == lane_class ? 1 : 0;
  }
  if (out.embeddings.defined()) {
    p.instance = cluster_embeddings(out.embeddings, mask, model.config().delta_d);
  } else {
    p.instance = mask;
  }
  return p;
}

tusimple::Record lanes_from_instances(const LabelMap& instances, const std::vector<int>& h_samples,
                                      int min_pixels) {
  std::map<int, int> counts;
  for (int v : instances.values) {
    if (v > 0) ++counts[v];
  }
  tusimple::Record r;
  r.h_samples = h_samples;
  for (const auto& [id, count] : counts) {
    if (count < min_pixels) continue;
    std::vector<double> xs;
    bool any = false;
    for (int row : h_samples) {
      double sum = 0.0;
      int n = 0;
      if (row >= 0 && row < instances.height) {
        for (int x = 0; x < instances.width; ++x) {
          if (instances.at(row, x) == id) {
            sum += x;
            ++n;
          }
        }
      }
      xs.push_back(n > 0 ? sum / n : tusimple::kAbsent);
      any = any || n > 0;
    }
    if (any) r.lanes.push_back(std::move(xs));
  }
  return r;
}

ad::Checkpoint make_checkpoint(const PTSegModel& model, const ad::AdamState& adam,
                               std::map<std::string, std::string> extra_meta) {
  ad::Checkpoint c;
  c.meta = model.config().to_meta();
  c.meta["net.warp_ops_per_forward"] = std::to_string(model.warp_ops_per_forward());
  for (auto& [k, v] : extra_meta) c.meta[k] = std::move(v);
  for (const auto& p : model.parameters()) c.params.push_back({p.name, p.tensor});
  c.adam = adam;
  return c;
}

PTSegModel model_from_checkpoint(const ad::Checkpoint& ckpt) {
  PTSegModel m = build_model(NetworkConfig::from_meta(ckpt.meta), 0);
  auto& params = m.parameters();
  if (params.size() != ckpt.params.size()) {
    throw Error(ErrorCode::Checkpoint, "checkpoint holds " + std::to_string(ckpt.params.size()) +
                                           " tensors, model expects " +
                                           std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = ckpt.params[i];
    if (src.name != params[i].name || src.tensor.shape() != params[i].tensor.shape()) {
      throw Error(ErrorCode::Checkpoint, "tensor '" + src.name + "' does not fit '" +
                                             params[i].name + "'");
    }
    std::copy(src.tensor.values().begin(), src.tensor.values().end(),
              params[i].tensor.values().begin());
  }
  return m;
}

}  // namespace ptseg::model
