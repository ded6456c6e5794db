#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "ptseg/config.hpp"
#include "ptseg/error.hpp"

namespace ptseg::config {
namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"camera", {"f", "cx", "cy", "width", "height", "mount_height", "pitch_deg", "roll_deg"}},
      {"chain", {"horizon", "keypoints", "steps", "widths"}},
      {"network",
       {"depth", "base_channels", "classes", "instance_head", "embedding_dims", "delta_v",
        "delta_d", "lambda", "class_weights"}},
      {"data",
       {"dir", "count", "holdout", "lane_count", "lane_spacing", "marking_width",
        "curvature_range", "lateral_range", "brightness_range", "noise",
        "stop_line_probability", "arrow_probability", "keypoint_half_width", "keypoint_range"}},
      {"train",
       {"steps", "batch_size", "learning_rate", "weight_decay", "beta1", "beta2", "no_ptl",
        "overfit"}},
      {"eval",
       {"threshold", "lane_match_ratio", "bins", "pixel_bin_width", "meter_bin_width",
        "bin_count", "under_horizon", "min_lane_pixels"}},
  };
  return s;
}

const std::set<std::string> kTopLevel{"seed", "output"};

void check_keys(const pt::ptree& tree) {
  for (const auto& [name, node] : tree) {
    if (kTopLevel.count(name)) {
      if (!node.empty()) throw ConfigError(name, "must be a key, not a section");
      continue;
    }
    const auto it = schema().find(name);
    if (it == schema().end()) throw ConfigError(name, "unknown key or section");
    for (const auto& [key, value] : node) {
      if (!it->second.count(key)) throw ConfigError(name + "." + key, "unknown key");
      if (!value.empty()) throw ConfigError(name + "." + key, "nested keys are not allowed");
    }
  }
}

class Reader {
 public:
  explicit Reader(const pt::ptree& t) : tree_(t) {}

  std::optional<std::string> raw(const std::string& key) const {
    const auto v = tree_.get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return *v;
  }

  template <typename T>
  void read(const std::string& key, T& out) const {
    const auto v = raw(key);
    if (!v) return;
    out = convert<T>(key, *v);
  }

  std::vector<double> numbers(const std::string& key, const std::string& text) const {
    std::string spaced = text;
    for (char& c : spaced) {
      if (c == ',') c = ' ';
    }
    std::istringstream is(spaced);
    std::vector<double> out;
    std::string tok;
    while (is >> tok) out.push_back(convert<double>(key, tok));
    return out;
  }

  template <typename T>
  T convert(const std::string& key, const std::string& text) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
      if (text == "0" || text == "false" || text == "no" || text == "off") return false;
      throw ConfigError(key, "expected a boolean, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) {
      return T(text);
    } else {
      std::istringstream is(text);
      T v{};
      is >> v;
      if (is.fail() || !(is >> std::ws).eof()) {
        throw ConfigError(key, "expected a number, got '" + text + "'");
      }
      if constexpr (std::is_unsigned_v<T>) {
        if (text.find('-') != std::string::npos) throw ConfigError(key, "must not be negative");
      }
      return v;
    }
  }

 private:
  const pt::ptree& tree_;
};

void apply_override(pt::ptree& tree, const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(item, "override must look like section.key=value");
  }
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  tree.put(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
}

}  // namespace

std::vector<geometry::Vec3> RunConfig::keypoints() const {
  if (!chain.keypoints.empty()) return chain.keypoints;
  return camera.keypoints(data.scene.keypoint_half_width, data.scene.keypoint_range).points();
}

std::vector<int> RunConfig::widths() const {
  if (!chain.widths.empty()) return chain.widths;
  std::vector<int> w;
  int current = camera.view.width;
  for (int i = 0; i < chain.steps; ++i) {
    current = std::max(1, (current + 1) / 2);
    w.push_back(current);
  }
  return w;
}

const geometry::HorizonLine& RunConfig::require_horizon() const {
  if (!chain.horizon) throw ConfigError("chain.horizon", "is required (x1 y1 x2 y2 in pixels)");
  return *chain.horizon;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : source_text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 8);
}

RunConfig parse(const std::string& text, const std::vector<std::string>& overrides) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", std::string("unreadable INI: ") + e.message() + " at line " +
                                    std::to_string(e.line()));
  }
  for (const auto& o : overrides) apply_override(tree, o);
  check_keys(tree);
  const Reader r(tree);

  RunConfig c;
  r.read("seed", c.seed);
  r.read("output", c.output);

  auto& cam = c.camera;
  r.read("camera.f", cam.view.intrinsics.f);
  r.read("camera.cx", cam.view.intrinsics.cx);
  r.read("camera.cy", cam.view.intrinsics.cy);
  r.read("camera.width", cam.view.width);
  r.read("camera.height", cam.view.height);
  r.read("camera.mount_height", cam.height);
  if (const auto v = r.raw("camera.pitch_deg")) {
    cam.pitch = r.convert<double>("camera.pitch_deg", *v) * std::numbers::pi / 180.0;
  }
  if (const auto v = r.raw("camera.roll_deg")) {
    cam.roll = r.convert<double>("camera.roll_deg", *v) * std::numbers::pi / 180.0;
  }
  try {
    cam.validate();
  } catch (const Error& e) {
    throw ConfigError("camera", e.what());
  }

  if (const auto v = r.raw("chain.horizon")) {
    const auto n = r.numbers("chain.horizon", *v);
    if (n.size() != 4) throw ConfigError("chain.horizon", "needs 4 numbers: x1 y1 x2 y2");
    c.chain.horizon = geometry::HorizonLine{geometry::Vec3(n[0], n[1], 1),
                                            geometry::Vec3(n[2], n[3], 1)};
  }
  if (const auto v = r.raw("chain.keypoints")) {
    const auto n = r.numbers("chain.keypoints", *v);
    if (n.size() % 2 != 0 || n.size() < 6) {
      throw ConfigError("chain.keypoints", "needs at least 3 'x y' pairs separated by commas");
    }
    for (std::size_t i = 0; i < n.size(); i += 2) c.chain.keypoints.emplace_back(n[i], n[i + 1], 1);
  }
  r.read("chain.steps", c.chain.steps);
  if (c.chain.steps < 0) throw ConfigError("chain.steps", "must be >= 0");
  if (const auto v = r.raw("chain.widths")) {
    for (double w : r.numbers("chain.widths", *v)) {
      if (w < 1 || w != static_cast<int>(w)) throw ConfigError("chain.widths", "must be positive integers");
      c.chain.widths.push_back(static_cast<int>(w));
    }
    if (c.chain.widths.size() != static_cast<std::size_t>(c.chain.steps)) {
      throw ConfigError("chain.widths", "needs one width per step");
    }
  }

  auto& n = c.network;
  r.read("network.depth", n.depth);
  r.read("network.base_channels", n.base_channels);
  r.read("network.classes", n.classes);
  r.read("network.instance_head", n.instance_head);
  r.read("network.embedding_dims", n.embedding_dims);
  r.read("network.delta_v", n.delta_v);
  r.read("network.delta_d", n.delta_d);
  r.read("network.lambda", n.lambda);
  if (const auto v = r.raw("network.class_weights")) {
    n.class_weights = r.numbers("network.class_weights", *v);
  }
  if (n.depth < 1) throw ConfigError("network.depth", "must be >= 1");
  if (c.chain.steps > n.depth) throw ConfigError("chain.steps", "must not exceed network.depth");

  auto& d = c.data;
  r.read("data.dir", d.dir);
  r.read("data.count", d.count);
  r.read("data.holdout", d.holdout);
  auto& s = d.scene;
  s.base.camera = cam;
  r.read("data.lane_count", s.base.lane_count);
  r.read("data.lane_spacing", s.base.lane_spacing);
  r.read("data.marking_width", s.base.marking_width);
  r.read("data.curvature_range", s.curvature_range);
  r.read("data.lateral_range", s.lateral_range);
  r.read("data.brightness_range", s.brightness_range);
  r.read("data.noise", s.noise);
  r.read("data.stop_line_probability", s.stop_line_probability);
  r.read("data.arrow_probability", s.arrow_probability);
  r.read("data.keypoint_half_width", s.keypoint_half_width);
  r.read("data.keypoint_range", s.keypoint_range);

  auto& t = c.train;
  r.read("train.steps", t.steps);
  r.read("train.batch_size", t.batch_size);
  r.read("train.learning_rate", t.adam.learning_rate);
  r.read("train.weight_decay", t.adam.weight_decay);
  r.read("train.beta1", t.adam.beta1);
  r.read("train.beta2", t.adam.beta2);
  r.read("train.no_ptl", t.no_ptl);
  r.read("train.overfit", t.overfit);
  if (t.steps < 0) throw ConfigError("train.steps", "must be >= 0");
  if (t.batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");

  auto& e = c.eval;
  r.read("eval.threshold", e.lanes.threshold);
  r.read("eval.lane_match_ratio", e.lanes.lane_match_ratio);
  if (const auto v = r.raw("eval.bins")) {
    if (*v == "px") {
      e.bins = eval::BinUnit::Pixels;
    } else if (*v == "m") {
      e.bins = eval::BinUnit::Meters;
    } else {
      throw ConfigError("eval.bins", "must be 'px' or 'm'");
    }
  }
  r.read("eval.pixel_bin_width", e.pixel_bin_width);
  r.read("eval.meter_bin_width", e.meter_bin_width);
  r.read("eval.bin_count", e.bin_count);
  r.read("eval.under_horizon", e.under_horizon);
  r.read("eval.min_lane_pixels", e.min_lane_pixels);
  if (!(e.pixel_bin_width > 0) || !(e.meter_bin_width > 0) || e.bin_count < 1) {
    throw ConfigError("eval", "bin widths must be positive and bin_count >= 1");
  }

  std::ostringstream text_out;
  pt::write_ini(text_out, tree);
  c.source_text = text_out.str();
  return c;
}

RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), overrides);
}

}  // namespace ptseg::config
