#pragma once

// Minimal tape-based reverse-mode differentiation over dense float64 tensors,
// with the operator set the segmentation network needs.
//
// Tensors are shared handles: copying a Tensor aliases the same storage.
// Operations append a backward closure to the Tape when any input requires a
// gradient; Tape::backward replays them in reverse exactly once.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptseg/label_map.hpp"

namespace ptseg::warp {
class SamplingPlan;
}

namespace ptseg::ad {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->values.size(); }

  std::span<double> values() { return impl_->values; }
  std::span<const double> values() const { return impl_->values; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated (zero-filled) on first use.
  std::span<double> grad_buffer() const;
  void zero_grad();

  /// Deep copy without gradient history.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

class Tape {
 public:
  void record(std::string op, std::function<void()> backward);

  /// Seeds d(loss) = 1 and runs every recorded closure in reverse order.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::size_t count(std::string_view op) const;

 private:
  struct Node {
    std::string op;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool replayed_ = false;
};

// Layers. Feature maps are rank-3 [C, H, W]; no batch axis.

/// Same-padded 2-D convolution, odd square kernel [C_out, C_in, k, k].
/// Output spatial size is ceil(H / stride) x ceil(W / stride).
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride);

/// Adjoint of conv2d sharing its weight tensor: the input has weight.dim(0)
/// channels and the output weight.dim(1). `out_h`/`out_w` select the
/// output size among those with ceil(out / stride) == input size (0 means
/// stride * input).
Tensor conv2d_transpose(Tape& tape, const Tensor& input, const Tensor& weight,
                        const Tensor& bias, int stride, int out_h = 0, int out_w = 0);

Tensor relu(Tape& tape, const Tensor& input);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& input, double factor);
Tensor sum(Tape& tape, const Tensor& input);
/// <input, weights> as a scalar; handy for building test losses.
Tensor weighted_sum(Tape& tape, const Tensor& input, std::span<const double> weights);

/// Perspective Transformer Layer on a [C, H, W] tensor.
Tensor warp(Tape& tape, const Tensor& input, std::shared_ptr<const warp::SamplingPlan> plan);

// Losses.

/// Mean negative log-softmax of the labelled class over non-ignored pixels.
/// Optional per-class weights turn the mean into a weighted mean.
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const LabelMap& labels,
                             int ignore_label = -1,
                             std::span<const double> class_weights = {});

/// Variance + distance hinge loss on per-pixel embeddings [N, H, W].
/// Instance id 0 is background and ignored.
Tensor discriminative_loss(Tape& tape, const Tensor& embeddings, const LabelMap& instances,
                           double delta_v, double delta_d);

// Optimiser.

struct AdamOptions {
  double learning_rate = 4e-5;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 5e-4;  // decoupled
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update with decoupled weight decay. Parameters
/// without a gradient buffer are treated as having zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state);

// Gradient checking.

using ScalarFunction = std::function<Tensor(Tape&)>;

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Runs after backward; lets tests corrupt analytic gradients.
  std::function<void(std::vector<Tensor>&)> after_backward;
  /// Entries for which this returns true are skipped (e.g. ReLU kinks).
  std::function<bool(std::size_t input, std::size_t index)> skip;
  /// Take the error floor from the largest gradient over all inputs rather
  /// than per input. Inputs whose gradients are all near zero then compare
  /// against the overall scale instead of their own roundoff.
  bool global_scale = false;
};

struct GradCheckReport {
  std::vector<double> max_relative_error;  // one per input
  std::vector<double> max_absolute_error;
  bool passed = false;

  double worst() const;
};

/// Central-difference check of d fn / d inputs. Per-entry error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3 * scale), where
/// scale is the largest numeric gradient magnitude of that input (or of all
/// inputs with global_scale).
GradCheckReport finite_diff_check(const ScalarFunction& fn, std::vector<Tensor> inputs,
                                  const GradCheckOptions& options = {});

}  // namespace ptseg::ad
