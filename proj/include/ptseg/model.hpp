#pragma once

// Toy encoder-decoder with Perspective Transformer Layers: D residual
// stride-2 stages, the first N each followed by one step of the PTL chain,
// a mirrored decoder that undoes the steps, and semantic + embedding heads.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ptseg/autodiff.hpp"
#include "ptseg/checkpoint.hpp"
#include "ptseg/geometry.hpp"
#include "ptseg/label_map.hpp"
#include "ptseg/tusimple.hpp"
#include "ptseg/warp.hpp"

namespace ptseg::model {

struct NetworkConfig {
  int depth = 3;
  int base_channels = 16;
  int input_channels = 3;
  int classes = 2;
  bool instance_head = true;
  int embedding_dims = 4;
  /// Chain over the input view; its step count is N. The network takes the
  /// steps at full resolution and rescales them for each stage stride.
  geometry::ChainSpec chain;

  double delta_v = 0.5;
  double delta_d = 3.0;
  double instance_weight = 1.0;  // lambda
  std::vector<double> class_weights;

  int ptl_steps() const { return chain.steps; }
  const geometry::ViewSpec& input_view() const { return chain.view; }
  void validate() const;

  /// Flat key/value form stored in checkpoints.
  std::map<std::string, std::string> to_meta() const;
  static NetworkConfig from_meta(const std::map<std::string, std::string>& meta);
};

/// Chain spec for the network. `stage_widths[i]` is the width of the
/// feature map after PTL i + 1, at stride 2^(i+1); the full-resolution step
/// is that times the stride. Empty means halving per stage, i.e. every
/// full-resolution view as wide as the input.
geometry::ChainSpec network_chain(const geometry::ViewSpec& view,
                                  const geometry::HorizonLine& horizon,
                                  const std::vector<geometry::Vec3>& keypoints, int steps,
                                  const std::vector<int>& stage_widths = {});

/// Where a feature map lives: its virtual view at stage stride.
struct StageView {
  std::string name;
  geometry::ViewSpec view;
  int stride = 1;
};

class PTSegModel {
 public:
  const NetworkConfig& config() const { return config_; }
  const geometry::PTLChain& chain() const { return chain_; }

  std::vector<ad::NamedTensor>& parameters() { return params_; }
  const std::vector<ad::NamedTensor>& parameters() const { return params_; }
  std::vector<ad::Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;
  const ad::Tensor& parameter(const std::string& name) const;

  /// Views of encoder outputs e_0..e_D and decoder outputs d_D-1..d_0.
  const std::vector<StageView>& encoder_views() const { return encoder_views_; }
  const std::vector<StageView>& decoder_views() const { return decoder_views_; }
  /// Warp ops per forward pass (2N).
  int warp_ops_per_forward() const;

 private:
  friend PTSegModel build_model(const NetworkConfig& cfg, std::uint64_t seed);
  friend struct ForwardAccess;

  NetworkConfig config_;
  geometry::PTLChain chain_ = geometry::empty_chain({});
  std::vector<ad::NamedTensor> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::shared_ptr<const warp::SamplingPlan>> encoder_plans_;  // stage i -> [i-1]
  std::vector<std::shared_ptr<const warp::SamplingPlan>> decoder_plans_;  // level j -> [j-1]
  std::vector<StageView> encoder_views_;
  std::vector<StageView> decoder_views_;
};

/// He-initialized weights drawn from a generator seeded by `seed`; zero biases.
/// Throws IncompatibleChain when the chain does not start at the input view
/// or has more steps than stages.
PTSegModel build_model(const NetworkConfig& cfg, std::uint64_t seed);

struct StageFeature {
  std::string name;
  ad::Tensor tensor;
};

struct Outputs {
  ad::Tensor logits;      // [K, H, W]
  ad::Tensor embeddings;  // [N_e, H, W]; undefined without the instance head
  std::vector<StageFeature> stages;  // filled when requested
};

/// `image` comes from image_tensor and must match the input view.
Outputs forward(ad::Tape& tape, const PTSegModel& model, const ad::Tensor& image,
                bool keep_stages = false);
/// [C, H, W] tensor of the image values shifted by -0.5.
ad::Tensor image_tensor(const warp::FeatureMap& image);

struct LossTerms {
  ad::Tensor total;
  double cross_entropy = 0.0;
  double discriminative = 0.0;
};

/// Cross-entropy plus lambda times the discriminative loss (skipped when the
/// head is off or the sample has no instances).
LossTerms loss(ad::Tape& tape, const PTSegModel& model, const Outputs& out,
               const LabelMap& semantic, const LabelMap& instance);

/// Greedy clustering of the masked pixels (mask != 0) in raster order.
LabelMap cluster_embeddings(const ad::Tensor& embeddings, const LabelMap& mask, double delta_d);

struct Prediction {
  LabelMap semantic;
  LabelMap instance;  // 0 outside the lane class
};

/// Forward, per-pixel argmax and clustering of `lane_class` pixels.
Prediction predict(const PTSegModel& model, const warp::FeatureMap& image, int lane_class = 1);

/// Lane x per sampled row as the mean column of each instance on that row;
/// instances with fewer than `min_pixels` pixels are dropped.
tusimple::Record lanes_from_instances(const LabelMap& instances, const std::vector<int>& h_samples,
                                      int min_pixels = 10);

// Checkpoints.

ad::Checkpoint make_checkpoint(const PTSegModel& model, const ad::AdamState& adam,
                               std::map<std::string, std::string> extra_meta = {});
/// Rebuilds the model from the stored configuration and copies the weights.
PTSegModel model_from_checkpoint(const ad::Checkpoint& ckpt);

}  // namespace ptseg::model
