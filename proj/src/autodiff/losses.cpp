#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "ptseg/autodiff.hpp"
#include "ptseg/error.hpp"

namespace ptseg::ad {
namespace {

void check_map(const Tensor& t, const LabelMap& labels, const char* what) {
  if (!t.defined() || t.rank() != 3 || t.dim(1) != labels.height || t.dim(2) != labels.width) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": label map " + std::to_string(labels.height) + "x" +
                    std::to_string(labels.width) + " does not match tensor " +
                    (t.defined() ? shape_string(t.shape()) : std::string("<undefined>")));
  }
}

}  // namespace

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const LabelMap& labels,
                             int ignore_label, std::span<const double> class_weights) {
  check_map(logits, labels, "softmax_cross_entropy");
  const int classes = logits.dim(0);
  const std::size_t plane = labels.size();
  if (!class_weights.empty() && class_weights.size() != static_cast<std::size_t>(classes)) {
    throw Error(ErrorCode::ShapeMismatch, "need one class weight per class");
  }
  auto weight_of = [&](int label) {
    return class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(label)];
  };

  // Softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  const auto x = logits.values();
  double loss = 0.0;
  double total_weight = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    double peak = x[p];
    for (int k = 1; k < classes; ++k) peak = std::max(peak, x[k * plane + p]);
    double z = 0.0;
    for (int k = 0; k < classes; ++k) z += std::exp(x[k * plane + p] - peak);
    for (int k = 0; k < classes; ++k) (*probs)[k * plane + p] = std::exp(x[k * plane + p] - peak) / z;

    const int label = labels.values[p];
    if (label == ignore_label) continue;
    if (label < 0 || label >= classes) {
      throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(label) + " out of range");
    }
    const double w = weight_of(label);
    loss += w * (std::log(z) + peak - x[static_cast<std::size_t>(label) * plane + p]);
    total_weight += w;
  }
  if (!(total_weight > 0.0)) {
    throw Error(ErrorCode::EmptyLabelSet, "every pixel is ignored");
  }

  Tensor out = Tensor::scalar(loss / total_weight, logits.requires_grad());
  if (!logits.requires_grad()) return out;
  auto weights = std::make_shared<std::vector<double>>(class_weights.begin(), class_weights.end());
  tape.record("softmax_cross_entropy", [=, logits = logits]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0] / total_weight;
    auto gl = logits.grad_buffer();
    for (std::size_t p = 0; p < plane; ++p) {
      const int label = labels.values[p];
      if (label == ignore_label) continue;
      const double w = weights->empty() ? 1.0 : (*weights)[static_cast<std::size_t>(label)];
      for (int k = 0; k < classes; ++k) {
        const double target = k == label ? 1.0 : 0.0;
        gl[k * plane + p] += g * w * ((*probs)[k * plane + p] - target);
      }
    }
  });
  return out;
}

Tensor discriminative_loss(Tape& tape, const Tensor& embeddings, const LabelMap& instances,
                           double delta_v, double delta_d) {
  check_map(embeddings, instances, "discriminative_loss");
  if (!(delta_v > 0.0) || !(delta_d > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "margins must be positive");
  }
  const int dims = embeddings.dim(0);
  const std::size_t plane = instances.size();
  const auto e = embeddings.values();

  // Dense instance index per pixel (-1 for background), ordered by id.
  std::map<int, int> index_of;
  for (int id : instances.values) {
    if (id > 0) index_of.emplace(id, 0);
  }
  if (index_of.empty()) throw Error(ErrorCode::NoInstances, "instance map has no instances");
  int next = 0;
  for (auto& [id, idx] : index_of) idx = next++;
  const int count = next;

  auto member = std::make_shared<std::vector<int>>(plane, -1);
  std::vector<double> sizes(static_cast<std::size_t>(count), 0.0);
  auto means = std::make_shared<std::vector<double>>(static_cast<std::size_t>(count) * dims, 0.0);
  for (std::size_t p = 0; p < plane; ++p) {
    const int id = instances.values[p];
    if (id <= 0) continue;
    const int c = index_of[id];
    (*member)[p] = c;
    sizes[static_cast<std::size_t>(c)] += 1.0;
    for (int d = 0; d < dims; ++d) (*means)[c * dims + d] += e[d * plane + p];
  }
  for (int c = 0; c < count; ++c) {
    for (int d = 0; d < dims; ++d) (*means)[c * dims + d] /= sizes[static_cast<std::size_t>(c)];
  }

  auto distance_to_mean = [&](std::size_t p, int c) {
    double s = 0.0;
    for (int d = 0; d < dims; ++d) {
      const double diff = e[d * plane + p] - (*means)[c * dims + d];
      s += diff * diff;
    }
    return std::sqrt(s);
  };
  auto mean_gap = [&](int a, int b) {
    double s = 0.0;
    for (int d = 0; d < dims; ++d) {
      const double diff = (*means)[a * dims + d] - (*means)[b * dims + d];
      s += diff * diff;
    }
    return std::sqrt(s);
  };

  std::vector<double> variance(static_cast<std::size_t>(count), 0.0);
  for (std::size_t p = 0; p < plane; ++p) {
    const int c = (*member)[p];
    if (c < 0) continue;
    const double h = std::max(0.0, distance_to_mean(p, c) - delta_v);
    variance[static_cast<std::size_t>(c)] += h * h;
  }
  double var_term = 0.0;
  for (int c = 0; c < count; ++c) {
    var_term += variance[static_cast<std::size_t>(c)] / sizes[static_cast<std::size_t>(c)];
  }
  var_term /= count;

  double dist_term = 0.0;
  const int pairs = count * (count - 1) / 2;
  for (int a = 0; a < count; ++a) {
    for (int b = a + 1; b < count; ++b) {
      const double h = std::max(0.0, 2.0 * delta_d - mean_gap(a, b));
      dist_term += h * h;
    }
  }
  if (pairs > 0) dist_term /= pairs;

  Tensor out = Tensor::scalar(var_term + dist_term, embeddings.requires_grad());
  if (!embeddings.requires_grad()) return out;

  auto sizes_ptr = std::make_shared<std::vector<double>>(std::move(sizes));
  tape.record("discriminative_loss", [=, embeddings = embeddings]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0];
    const auto ev = embeddings.values();
    auto ge = embeddings.grad_buffer();
    // Gradient reaching each mean, pushed back to its members afterwards.
    std::vector<double> gmean(static_cast<std::size_t>(count) * dims, 0.0);

    for (std::size_t p = 0; p < plane; ++p) {
      const int c = (*member)[p];
      if (c < 0) continue;
      double r2 = 0.0;
      for (int d = 0; d < dims; ++d) {
        const double diff = ev[d * plane + p] - (*means)[c * dims + d];
        r2 += diff * diff;
      }
      const double r = std::sqrt(r2);
      const double h = r - delta_v;
      if (h <= 0.0 || r == 0.0) continue;
      const double coeff = g * 2.0 * h / (r * count * (*sizes_ptr)[static_cast<std::size_t>(c)]);
      for (int d = 0; d < dims; ++d) {
        const double v = coeff * (ev[d * plane + p] - (*means)[c * dims + d]);
        ge[d * plane + p] += v;
        gmean[c * dims + d] -= v;
      }
    }
    if (pairs > 0) {
      for (int a = 0; a < count; ++a) {
        for (int b = a + 1; b < count; ++b) {
          double r2 = 0.0;
          for (int d = 0; d < dims; ++d) {
            const double diff = (*means)[a * dims + d] - (*means)[b * dims + d];
            r2 += diff * diff;
          }
          const double r = std::sqrt(r2);
          const double h = 2.0 * delta_d - r;
          if (h <= 0.0 || r == 0.0) continue;
          const double coeff = -g * 2.0 * h / (r * pairs);
          for (int d = 0; d < dims; ++d) {
            const double v = coeff * ((*means)[a * dims + d] - (*means)[b * dims + d]);
            gmean[a * dims + d] += v;
            gmean[b * dims + d] -= v;
          }
        }
      }
    }
    for (std::size_t p = 0; p < plane; ++p) {
      const int c = (*member)[p];
      if (c < 0) continue;
      const double inv = 1.0 / (*sizes_ptr)[static_cast<std::size_t>(c)];
      for (int d = 0; d < dims; ++d) ge[d * plane + p] += gmean[c * dims + d] * inv;
    }
  });
  return out;
}

}  // namespace ptseg::ad
