#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "ptseg/error.hpp"
#include "ptseg/model.hpp"

namespace ptseg::model {
namespace {

using geometry::ViewSpec;

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<double> parse_numbers(const std::string& s, const std::string& key) {
  std::string spaced = s;
  for (char& c : spaced) {
    if (c == ',') c = ' ';
  }
  std::istringstream is(spaced);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw Error(ErrorCode::Checkpoint, "meta '" + key + "' holds a non-number: " + tok);
    }
  }
  return out;
}

int pow2(int e) { return 1 << e; }

}  // namespace

void NetworkConfig::validate() const {
  chain.view.validate();
  if (depth < 1) throw Error(ErrorCode::InvalidArgument, "depth must be >= 1");
  if (base_channels < 1 || input_channels < 1) {
    throw Error(ErrorCode::InvalidArgument, "channel counts must be positive");
  }
  if (classes < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 classes");
  if (instance_head && embedding_dims < 1) {
    throw Error(ErrorCode::InvalidArgument, "embedding_dims must be >= 1");
  }
  if (chain.steps < 0 || chain.steps > depth) {
    throw Error(ErrorCode::IncompatibleChain,
                "ptl steps " + std::to_string(chain.steps) + " must lie in [0, depth = " +
                    std::to_string(depth) + "]");
  }
  if (!class_weights.empty() && class_weights.size() != static_cast<std::size_t>(classes)) {
    throw Error(ErrorCode::InvalidArgument, "class_weights needs one entry per class");
  }
}

std::map<std::string, std::string> NetworkConfig::to_meta() const {
  const auto& v = chain.view;
  std::map<std::string, std::string> m{
      {"net.depth", std::to_string(depth)},
      {"net.base_channels", std::to_string(base_channels)},
      {"net.input_channels", std::to_string(input_channels)},
      {"net.classes", std::to_string(classes)},
      {"net.instance_head", instance_head ? "1" : "0"},
      {"net.embedding_dims", std::to_string(embedding_dims)},
      {"net.delta_v", num(delta_v)},
      {"net.delta_d", num(delta_d)},
      {"net.instance_weight", num(instance_weight)},
      {"chain.view", num(v.intrinsics.f) + " " + num(v.intrinsics.cx) + " " +
                         num(v.intrinsics.cy) + " " + std::to_string(v.width) + " " +
                         std::to_string(v.height)},
      {"chain.steps", std::to_string(chain.steps)},
  };
  std::string w, kp, cw;
  for (int x : chain.widths) w += (w.empty() ? "" : " ") + std::to_string(x);
  for (const auto& p : chain.keypoints) {
    kp += (kp.empty() ? "" : ", ") + num(p.x()) + " " + num(p.y());
  }
  for (double x : class_weights) cw += (cw.empty() ? "" : " ") + num(x);
  m["chain.widths"] = w;
  m["chain.keypoints"] = kp;
  m["chain.horizon"] = num(chain.horizon.left.x()) + " " + num(chain.horizon.left.y()) + " " +
                       num(chain.horizon.right.x()) + " " + num(chain.horizon.right.y());
  m["net.class_weights"] = cw;
  return m;
}

NetworkConfig NetworkConfig::from_meta(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = meta.find(key);
    if (it == meta.end()) throw Error(ErrorCode::Checkpoint, "meta is missing '" + key + "'");
    return it->second;
  };
  auto integer = [&](const std::string& key) {
    const auto v = parse_numbers(get(key), key);
    if (v.size() != 1) throw Error(ErrorCode::Checkpoint, "meta '" + key + "' is not a number");
    return static_cast<int>(v[0]);
  };
  auto real = [&](const std::string& key) {
    const auto v = parse_numbers(get(key), key);
    if (v.size() != 1) throw Error(ErrorCode::Checkpoint, "meta '" + key + "' is not a number");
    return v[0];
  };
  NetworkConfig c;
  c.depth = integer("net.depth");
  c.base_channels = integer("net.base_channels");
  c.input_channels = integer("net.input_channels");
  c.classes = integer("net.classes");
  c.instance_head = integer("net.instance_head") != 0;
  c.embedding_dims = integer("net.embedding_dims");
  c.delta_v = real("net.delta_v");
  c.delta_d = real("net.delta_d");
  c.instance_weight = real("net.instance_weight");
  c.class_weights = parse_numbers(get("net.class_weights"), "net.class_weights");
  const auto v = parse_numbers(get("chain.view"), "chain.view");
  if (v.size() != 5) throw Error(ErrorCode::Checkpoint, "meta 'chain.view' needs 5 numbers");
  c.chain.view = {{v[0], v[1], v[2]}, static_cast<int>(v[3]), static_cast<int>(v[4])};
  c.chain.steps = integer("chain.steps");
  for (double x : parse_numbers(get("chain.widths"), "chain.widths")) {
    c.chain.widths.push_back(static_cast<int>(x));
  }
  const auto h = parse_numbers(get("chain.horizon"), "chain.horizon");
  if (h.size() != 4) throw Error(ErrorCode::Checkpoint, "meta 'chain.horizon' needs 4 numbers");
  c.chain.horizon = {geometry::Vec3(h[0], h[1], 1), geometry::Vec3(h[2], h[3], 1)};
  const auto kp = parse_numbers(get("chain.keypoints"), "chain.keypoints");
  if (kp.size() % 2 != 0) throw Error(ErrorCode::Checkpoint, "odd key-point coordinate count");
  for (std::size_t i = 0; i < kp.size(); i += 2) c.chain.keypoints.emplace_back(kp[i], kp[i + 1], 1);
  return c;
}

geometry::ChainSpec network_chain(const ViewSpec& view, const geometry::HorizonLine& horizon,
                                  const std::vector<geometry::Vec3>& keypoints, int steps,
                                  const std::vector<int>& stage_widths) {
  if (steps < 0) throw Error(ErrorCode::InvalidStepCount, "steps must be >= 0");
  std::vector<int> widths(static_cast<std::size_t>(steps), view.width);
  if (!stage_widths.empty()) {
    if (stage_widths.size() != widths.size()) {
      throw Error(ErrorCode::InvalidArgument, "need one stage width per chain step");
    }
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (stage_widths[i] < 1) throw Error(ErrorCode::InvalidArgument, "stage widths must be >= 1");
      widths[i] = stage_widths[i] * pow2(static_cast<int>(i) + 1);
    }
  }
  return {view, horizon, keypoints, steps, std::move(widths)};
}

std::vector<ad::Tensor> PTSegModel::parameter_tensors() const {
  std::vector<ad::Tensor> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

std::size_t PTSegModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

const ad::Tensor& PTSegModel::parameter(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::InvalidArgument, "no parameter '" + name + "'");
  return params_[it->second].tensor;
}

int PTSegModel::warp_ops_per_forward() const {
  return static_cast<int>(encoder_plans_.size() + decoder_plans_.size());
}

namespace {

struct Builder {
  std::vector<ad::NamedTensor>& params;
  std::map<std::string, std::size_t>& index;
  std::mt19937_64 rng;

  void add(const std::string& name, ad::Shape shape, double stddev) {
    ad::Tensor t(shape, true);
    if (stddev > 0.0) {
      std::normal_distribution<double> g(0.0, stddev);
      for (double& v : t.values()) v = g(rng);
    }
    index[name] = params.size();
    params.push_back({name, t});
  }

  void conv(const std::string& name, int cin, int cout, int k) {
    add(name + ".w", {cout, cin, k, k}, std::sqrt(2.0 / (cin * k * k)));
    add(name + ".b", {cout}, 0.0);
  }

  // Transposed conv weights are [C_in, C_out, k, k] with C_in the channels it consumes.
  void conv_t(const std::string& name, int cin, int cout, int k) {
    add(name + ".w", {cin, cout, k, k}, std::sqrt(2.0 / (cin * k * k)));
    add(name + ".b", {cout}, 0.0);
  }
};

int stage_channels(const NetworkConfig& c, int i) {
  return i == 0 ? c.base_channels : c.base_channels * pow2(i - 1);
}

void check_view(const ViewSpec& expected, const ViewSpec& got, const std::string& where) {
  if (!(expected == got)) {
    throw Error(ErrorCode::IncompatibleChain,
                where + ": expected a " + std::to_string(expected.width) + "x" +
                    std::to_string(expected.height) + " view, chain gives " +
                    std::to_string(got.width) + "x" + std::to_string(got.height));
  }
}

}  // namespace

PTSegModel build_model(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PTSegModel m;
  m.config_ = cfg;
  m.chain_ = cfg.chain.build();
  const int n = cfg.chain.steps;
  const int d = cfg.depth;
  check_view(cfg.chain.view, m.chain_.source(), "chain source");
  if (static_cast<int>(m.chain_.size()) != n) {
    throw Error(ErrorCode::IncompatibleChain, "chain step count differs from ptl_steps");
  }

  // Full-resolution view after i chain steps.
  std::vector<ViewSpec> views{cfg.chain.view};
  for (const auto& s : m.chain_.steps) views.push_back(s.homography.target());
  auto view_at = [&](int i) { return views[static_cast<std::size_t>(std::min(i, n))]; };

  const auto inverse = geometry::invert_chain(m.chain_);
  m.encoder_views_.push_back({"enc0", view_at(0), 1});
  for (int i = 1; i <= d; ++i) {
    const int stride = pow2(i);
    if (i <= n) {
      const auto h = warp::scale_homography_for_stride(m.chain_.steps[i - 1].homography, stride);
      check_view(warp::scale_view(views[i - 1], stride), h.source(),
                 "encoder stage " + std::to_string(i) + " input");
      check_view(warp::scale_view(views[i], stride), h.target(),
                 "encoder stage " + std::to_string(i) + " output");
      m.encoder_plans_.push_back(std::make_shared<warp::SamplingPlan>(h));
    }
    m.encoder_views_.push_back(
        {"enc" + std::to_string(i), warp::scale_view(view_at(i), stride), stride});
  }
  for (int j = d; j >= 1; --j) {
    const int stride = pow2(j - 1);
    ViewSpec up = warp::scale_view(view_at(j), stride);
    if (j <= n) {
      const auto h = warp::scale_homography_for_stride(
          inverse.steps[static_cast<std::size_t>(n - j)].homography, stride);
      check_view(up, h.source(), "decoder level " + std::to_string(j) + " input");
      up = h.target();
      m.decoder_plans_.push_back(std::make_shared<warp::SamplingPlan>(h));
    }
    // The skip partner must live in the same view at the same resolution.
    check_view(m.encoder_views_[static_cast<std::size_t>(j - 1)].view, up,
               "decoder level " + std::to_string(j) + " skip");
    m.decoder_views_.push_back({"dec" + std::to_string(j - 1), up, stride});
  }
  std::reverse(m.decoder_plans_.begin(), m.decoder_plans_.end());  // index j-1

  Builder b{m.params_, m.index_, std::mt19937_64(seed)};
  b.conv("stem", cfg.input_channels, cfg.base_channels, 3);
  for (int i = 1; i <= d; ++i) {
    const std::string p = "enc" + std::to_string(i);
    const int cin = stage_channels(cfg, i - 1), cout = stage_channels(cfg, i);
    b.conv(p + ".conv1", cin, cout, 3);
    b.conv(p + ".conv2", cout, cout, 3);
    b.conv(p + ".proj", cin, cout, 1);
  }
  for (int j = d; j >= 1; --j) {
    const std::string p = "dec" + std::to_string(j);
    const int cin = stage_channels(cfg, j), cout = stage_channels(cfg, j - 1);
    b.conv_t(p + ".up", cin, cout, 3);
    b.conv(p + ".refine", cout, cout, 3);
  }
  b.conv("head.semantic", cfg.base_channels, cfg.classes, 1);
  if (cfg.instance_head) b.conv("head.embedding", cfg.base_channels, cfg.embedding_dims, 1);
  return m;
}

struct ForwardAccess {
  static const std::vector<std::shared_ptr<const warp::SamplingPlan>>& enc(const PTSegModel& m) {
    return m.encoder_plans_;
  }
  static const std::vector<std::shared_ptr<const warp::SamplingPlan>>& dec(const PTSegModel& m) {
    return m.decoder_plans_;
  }
};

ad::Tensor image_tensor(const warp::FeatureMap& image) {
  std::vector<double> v(image.values);
  for (double& x : v) x -= 0.5;
  return ad::Tensor({image.shape.channels, image.shape.height, image.shape.width}, std::move(v));
}

Outputs forward(ad::Tape& tape, const PTSegModel& model, const ad::Tensor& image,
                bool keep_stages) {
  const auto& cfg = model.config();
  const auto& in = cfg.chain.view;
  if (image.rank() != 3 || image.dim(0) != cfg.input_channels || image.dim(1) != in.height ||
      image.dim(2) != in.width) {
    throw Error(ErrorCode::ShapeMismatch, "image " + ad::shape_string(image.shape()) +
                                              " does not match the input view [" +
                                              std::to_string(cfg.input_channels) + ", " +
                                              std::to_string(in.height) + ", " +
                                              std::to_string(in.width) + "]");
  }
  auto P = [&](const std::string& name) -> const ad::Tensor& { return model.parameter(name); };
  auto conv = [&](const ad::Tensor& x, const std::string& name, int stride) {
    return ad::conv2d(tape, x, P(name + ".w"), P(name + ".b"), stride);
  };
  Outputs out;
  auto keep = [&](const std::string& name, const ad::Tensor& t) {
    if (keep_stages) out.stages.push_back({name, t});
  };

  const int d = cfg.depth;
  const int n = cfg.chain.steps;
  const auto& enc_plans = ForwardAccess::enc(model);
  const auto& dec_plans = ForwardAccess::dec(model);

  std::vector<ad::Tensor> skips;
  ad::Tensor h = ad::relu(tape, conv(image, "stem", 1));
  skips.push_back(h);
  keep("enc0", h);
  for (int i = 1; i <= d; ++i) {
    const std::string p = "enc" + std::to_string(i);
    const ad::Tensor a = ad::relu(tape, conv(h, p + ".conv1", 2));
    const ad::Tensor r = ad::add(tape, conv(a, p + ".conv2", 1), conv(h, p + ".proj", 2));
    h = ad::relu(tape, r);
    if (i <= n) {
      keep(p + ".pre_ptl", h);
      h = ad::warp(tape, h, enc_plans[static_cast<std::size_t>(i - 1)]);
    }
    skips.push_back(h);
    keep(p, h);
  }
  for (int j = d; j >= 1; --j) {
    const std::string p = "dec" + std::to_string(j);
    const auto& skip = skips[static_cast<std::size_t>(j - 1)];
    const auto& sv = model.encoder_views()[static_cast<std::size_t>(j - 1)];
    int oh = 0, ow = 0;
    if (j <= n) {
      const auto& plan = *dec_plans[static_cast<std::size_t>(j - 1)];
      oh = plan.source_height();
      ow = plan.source_width();
    } else {
      oh = sv.view.height;
      ow = sv.view.width;
    }
    ad::Tensor u = ad::relu(tape, ad::conv2d_transpose(tape, h, P(p + ".up.w"), P(p + ".up.b"), 2,
                                                       oh, ow));
    if (j <= n) u = ad::warp(tape, u, dec_plans[static_cast<std::size_t>(j - 1)]);
    h = ad::relu(tape, conv(ad::add(tape, u, skip), p + ".refine", 1));
    keep("dec" + std::to_string(j - 1), h);
  }
  out.logits = conv(h, "head.semantic", 1);
  if (cfg.instance_head) out.embeddings = conv(h, "head.embedding", 1);
  return out;
}

LossTerms loss(ad::Tape& tape, const PTSegModel& model, const Outputs& out,
               const LabelMap& semantic, const LabelMap& instance) {
  const auto& cfg = model.config();
  LossTerms t;
  t.total = ad::softmax_cross_entropy(tape, out.logits, semantic, -1, cfg.class_weights);
  t.cross_entropy = t.total.item();
  if (!cfg.instance_head || !out.embeddings.defined()) return t;
  bool any = false;
  for (int v : instance.values) any = any || v > 0;
  if (!any) return t;
  const ad::Tensor disc =
      ad::discriminative_loss(tape, out.embeddings, instance, cfg.delta_v, cfg.delta_d);
  t.discriminative = disc.item();
  t.total = ad::add(tape, t.total, ad::scale(tape, disc, cfg.instance_weight));
  return t;
}

}  // namespace ptseg::model
