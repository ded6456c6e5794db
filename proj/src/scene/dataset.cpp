#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "ptseg/error.hpp"
#include "ptseg/image_io.hpp"
#include "ptseg/scene.hpp"

namespace ptseg::scene {
namespace {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

std::string file_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

std::string join_numbers(const std::vector<double>& v) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

std::vector<double> split_numbers(const std::string& s, const std::string& key) {
  std::string spaced = s;
  for (char& ch : spaced) {
    if (ch == ',') ch = ' ';
  }
  std::istringstream is(spaced);
  std::vector<double> v;
  std::string tok;
  while (is >> tok) {
    try {
      v.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw Error(ErrorCode::Io, "manifest key '" + key + "' holds a non-number: " + tok);
    }
  }
  return v;
}

void write_manifest(const fs::path& dir, const Manifest& m) {
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / "manifest.txt").string());
  out << std::setprecision(17);
  const auto& c = m.camera;
  out << "format = ptseg-synth\n"
      << "version = 1\n"
      << "count = " << m.count << "\n"
      << "seed = " << m.seed << "\n"
      << "width = " << c.view.width << "\n"
      << "height = " << c.view.height << "\n"
      << "f = " << c.view.intrinsics.f << "\n"
      << "cx = " << c.view.intrinsics.cx << "\n"
      << "cy = " << c.view.intrinsics.cy << "\n"
      << "camera_height = " << c.height << "\n"
      << "pitch = " << c.pitch << "\n"
      << "roll = " << c.roll << "\n"
      << "horizon = "
      << join_numbers({m.horizon.left.x(), m.horizon.left.y(), m.horizon.right.x(),
                       m.horizon.right.y()})
      << "\n";
  out << "keypoints =";
  for (std::size_t i = 0; i < m.keypoints.size(); ++i) {
    out << (i ? "," : "") << " " << join_numbers({m.keypoints[i].x(), m.keypoints[i].y()});
  }
  out << "\nlabels = labels.json\n";
  if (!out) throw Error(ErrorCode::Io, "write failed for manifest");
}

Manifest make_manifest(const DatasetConfig& cfg, std::size_t count, std::uint64_t seed) {
  Manifest m;
  m.count = count;
  m.seed = seed;
  m.camera = cfg.base.camera;
  m.horizon = m.camera.horizon();
  m.keypoints = m.camera.keypoints(cfg.keypoint_half_width, cfg.keypoint_range).points();
  for (std::size_t i = 0; i < count; ++i) m.image_files.push_back("images/" + file_stem(i) + ".png");
  return m;
}

}  // namespace

SceneConfig sample_config(const DatasetConfig& cfg, std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto symmetric = [&](double r) { return r * (2.0 * unit(rng) - 1.0); };

  SceneConfig s = cfg.base;
  s.curvature = cfg.base.curvature + symmetric(cfg.curvature_range);
  s.lateral_offset = cfg.base.lateral_offset + symmetric(cfg.lateral_range);
  s.dash_phase = unit(rng) * (s.dash_length + s.gap_length);
  s.brightness = 1.0 + symmetric(cfg.brightness_range);
  s.noise = cfg.noise;
  s.stop_line = unit(rng) < cfg.stop_line_probability;
  s.arrows = unit(rng) < cfg.arrow_probability;
  s.seed = rng();
  return s;
}

Dataset render_dataset(const DatasetConfig& cfg, std::size_t count, std::uint64_t seed) {
  Dataset ds;
  ds.manifest = make_manifest(cfg, count, seed);
  const auto kp = ds.manifest.keypoint_set();
  for (std::size_t i = 0; i < count; ++i) {
    SceneSample s = render_scene(sample_config(cfg, seed, i));
    s.bev = cfg.base.camera.bev_homography(kp);
    s.lanes.raw_file = ds.manifest.image_files[i];
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset generate_dataset(const DatasetConfig& cfg, std::size_t count, std::uint64_t seed,
                         const fs::path& dir) {
  Dataset ds = render_dataset(cfg, count, seed);
  for (const char* sub : {"images", "semantic", "instance"}) fs::create_directories(dir / sub);
  std::vector<tusimple::Record> records;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& s = ds.samples[i];
    const std::string name = file_stem(i) + ".png";
    io::write_png(dir / "images" / name, io::to_image(s.image));
    io::write_png(dir / "semantic" / name, io::to_image(s.semantic));
    io::write_png(dir / "instance" / name, io::to_image(s.instance));
    records.push_back(s.lanes);
  }
  tusimple::write(records, dir / "labels.json");
  write_manifest(dir, ds.manifest);
  return ds;
}

Manifest load_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.txt";
  if (!fs::exists(path)) throw Error(ErrorCode::Io, "no manifest at " + path.string());
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::Io, std::string("unreadable manifest: ") + e.what());
  }
  auto get = [&](const std::string& key) {
    const auto v = tree.get_optional<std::string>(key);
    if (!v) throw Error(ErrorCode::Io, "manifest is missing '" + key + "'");
    return *v;
  };
  auto num = [&](const std::string& key) { return split_numbers(get(key), key).at(0); };

  if (get("format") != "ptseg-synth") throw Error(ErrorCode::Io, "not a ptseg dataset manifest");
  Manifest m;
  m.count = static_cast<std::size_t>(std::stoull(get("count")));
  m.seed = std::stoull(get("seed"));
  m.camera.view = {{num("f"), num("cx"), num("cy")},
                   static_cast<int>(num("width")),
                   static_cast<int>(num("height"))};
  m.camera.height = num("camera_height");
  m.camera.pitch = num("pitch");
  m.camera.roll = num("roll");
  const auto hz = split_numbers(get("horizon"), "horizon");
  if (hz.size() != 4) throw Error(ErrorCode::Io, "manifest horizon needs 4 numbers");
  m.horizon = {geometry::Vec3(hz[0], hz[1], 1), geometry::Vec3(hz[2], hz[3], 1)};
  const auto kp = split_numbers(get("keypoints"), "keypoints");
  if (kp.size() % 2 != 0 || kp.size() < 6) {
    throw Error(ErrorCode::Io, "manifest keypoints need at least 3 x y pairs");
  }
  for (std::size_t i = 0; i < kp.size(); i += 2) m.keypoints.emplace_back(kp[i], kp[i + 1], 1.0);
  for (std::size_t i = 0; i < m.count; ++i) m.image_files.push_back("images/" + file_stem(i) + ".png");
  return m;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.manifest = load_manifest(dir);
  const auto records = tusimple::read(dir / "labels.json");
  if (records.size() != ds.manifest.count) {
    throw Error(ErrorCode::Io, "labels.json has " + std::to_string(records.size()) +
                                   " records but the manifest lists " +
                                   std::to_string(ds.manifest.count));
  }
  const auto bev = ds.manifest.camera.bev_homography(ds.manifest.keypoint_set());
  const auto horizon = ds.manifest.camera.horizon();
  for (std::size_t i = 0; i < ds.manifest.count; ++i) {
    const std::string name = file_stem(i) + ".png";
    SceneSample s{io::to_feature_map(io::read_png(dir / "images" / name, 3)),
                  io::to_label_map(io::read_png(dir / "semantic" / name, 1)),
                  io::to_label_map(io::read_png(dir / "instance" / name, 1)),
                  records[i],
                  horizon,
                  bev};
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace ptseg::scene
