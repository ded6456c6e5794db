// ptseg: chain inspection, warping, data generation, training, evaluation and
// feature visualization. Exit codes: 0 ok, 1 runtime failure, 2 config error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ptseg/checkpoint.hpp"
#include "ptseg/config.hpp"
#include "ptseg/error.hpp"
#include "ptseg/eval.hpp"
#include "ptseg/geometry.hpp"
#include "ptseg/image_io.hpp"
#include "ptseg/model.hpp"
#include "ptseg/pipeline.hpp"
#include "ptseg/scene.hpp"
#include "ptseg/train.hpp"
#include "ptseg/tusimple.hpp"
#include "ptseg/warp.hpp"

namespace fs = std::filesystem;
using namespace ptseg;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string run_dir;
};

// Flags are appended after --set so they win over both the file and --set.
config::RunConfig load_config(const Common& c, const std::vector<std::string>& flag_overrides) {
  std::vector<std::string> all = c.sets;
  all.insert(all.end(), flag_overrides.begin(), flag_overrides.end());
  if (c.config_path.empty()) return config::parse("", all);
  return config::load(fs::absolute(c.config_path), all);
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

fs::path run_directory(const Common& c, const config::RunConfig& cfg) {
  if (!c.run_dir.empty()) return fs::absolute(c.run_dir);
  return fs::absolute(cfg.output) / ("run-" + cfg.hash() + "-" + timestamp());
}

void print_matrix(std::ostream& os, const std::string& name, const geometry::Mat3& m) {
  os << "  " << name << " =\n";
  for (int r = 0; r < 3; ++r) {
    os << "    [";
    for (int col = 0; col < 3; ++col) {
      os << std::setw(16) << std::setprecision(9) << m(r, col) << (col < 2 ? "," : "");
    }
    os << " ]\n";
  }
}

std::string describe(const geometry::ViewSpec& v) {
  std::ostringstream os;
  os << std::setprecision(10) << "f=" << v.intrinsics.f << " cx=" << v.intrinsics.cx
     << " cy=" << v.intrinsics.cy << " size=" << v.width << "x" << v.height;
  return os.str();
}

geometry::PTLChain chain_from(const config::RunConfig& cfg) {
  if (cfg.chain.steps == 0) return geometry::empty_chain(cfg.camera.view);
  return geometry::build_ptl_chain(cfg.camera.view, cfg.require_horizon(),
                                   geometry::KeyPointSet(cfg.keypoints()), cfg.chain.steps,
                                   cfg.widths());
}

// decompose

int cmd_decompose(const config::RunConfig& cfg) {
  const auto chain = chain_from(cfg);
  auto& os = std::cout;
  os << "view 0: " << describe(chain.source()) << "\n";
  print_matrix(os, "K_0", chain.source().intrinsics.matrix());
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const auto& s = chain.steps[i];
    os << "step " << i + 1 << ":\n";
    print_matrix(os, "R_" + std::to_string(i + 1), s.rotation.matrix());
    print_matrix(os, "H_" + std::to_string(i + 1), s.homography.matrix());
    print_matrix(os, "K_" + std::to_string(i + 1), s.homography.target().intrinsics.matrix());
    os << "  viewport " << i + 1 << ": " << describe(s.homography.target()) << "\n";
  }
  print_matrix(os, "H_integral", chain.integral.matrix());
  os << "composition residual: " << std::scientific << std::setprecision(3)
     << chain.composition_residual() << "\n";
  return 0;
}

// warp

int cmd_warp(const config::RunConfig& cfg, const fs::path& input, bool all_steps,
             const fs::path& out_dir) {
  const auto chain = chain_from(cfg);
  const auto img = io::to_feature_map(io::read_png(input, 3));
  const auto& view = chain.source();
  if (img.shape.width != view.width || img.shape.height != view.height) {
    throw ConfigError("camera.width", "input is " + std::to_string(img.shape.width) + "x" +
                                          std::to_string(img.shape.height) +
                                          " but the camera view is " + std::to_string(view.width) +
                                          "x" + std::to_string(view.height));
  }
  fs::create_directories(out_dir);
  auto h = geometry::Homography::identity(view);
  auto emit = [&](std::size_t k) {
    const auto warped = warp::warp_forward(img, h);
    const fs::path p = out_dir / ("step_" + std::to_string(k) + ".png");
    io::write_png(p, io::to_image(warped));
    std::cout << p.string() << "  " << describe(h.target()) << "\n";
  };
  if (all_steps || chain.size() == 0) emit(0);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    h = chain.steps[i].homography.after(h);
    if (all_steps || i + 1 == chain.size()) emit(i + 1);
  }
  return 0;
}

// synth

int cmd_synth(const config::RunConfig& cfg, const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = scene::generate_dataset(cfg.data.scene, cfg.data.count, cfg.seed, dir);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "wrote " << ds.samples.size() << " samples to " << dir.string() << " in "
            << std::fixed << std::setprecision(2) << secs << " s\n";
  return 0;
}

scene::Dataset dataset_for(const config::RunConfig& cfg, const fs::path& run_dir) {
  if (!cfg.data.dir.empty()) return scene::load_dataset(fs::absolute(cfg.data.dir));
  const fs::path dir = run_dir / "data";
  std::cerr << "no data.dir given; generating " << cfg.data.count << " samples in "
            << dir.string() << "\n";
  return scene::generate_dataset(cfg.data.scene, cfg.data.count, cfg.seed, dir);
}

std::size_t train_count(const config::RunConfig& cfg, const scene::Dataset& ds) {
  const std::size_t n = ds.samples.size();
  const std::size_t hold = std::min(cfg.data.holdout, n);
  return n - hold;
}

// train

int cmd_train(const config::RunConfig& cfg, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  {
    std::ofstream out(run_dir / "config.ini");
    out << cfg.source_text;
  }
  const auto ds = dataset_for(cfg, run_dir);
  std::size_t n_train = train_count(cfg, ds);
  if (cfg.train.overfit) n_train = std::min<std::size_t>(1, ds.samples.size());
  if (n_train == 0) throw ConfigError("data.count", "no training samples left after the holdout");
  std::vector<train::Example> examples;
  for (std::size_t i = 0; i < n_train; ++i) {
    const auto& s = ds.samples[i];
    examples.push_back({&s.image, &s.semantic, &s.instance});
  }

  const auto ncfg = pipeline::network_config(cfg, ds.manifest, cfg.train.no_ptl);
  auto m = model::build_model(ncfg, cfg.seed);
  std::cout << "run dir: " << run_dir.string() << "\n"
            << "parameters: " << m.parameter_count()
            << ", warps per forward: " << m.warp_ops_per_forward() << "\n";

  train::TrainOptions opt;
  opt.steps = cfg.train.steps;
  opt.batch_size = cfg.train.batch_size;
  opt.adam = cfg.train.adam;
  opt.seed = cfg.seed;
  const int every = std::max(1, opt.steps / 20);
  const auto result = train::train(m, examples, opt, [&](const train::LogEntry& e) {
    if (e.step % every == 0 || e.step == opt.steps) {
      std::cout << "step " << e.step << " loss " << std::setprecision(6) << e.loss << "\n";
    }
  });

  const auto ckpt = model::make_checkpoint(
      m, result.adam,
      {{"run.seed", std::to_string(cfg.seed)},
       {"run.steps", std::to_string(opt.steps)},
       {"run.no_ptl", cfg.train.no_ptl ? "1" : "0"},
       {"run.config_hash", cfg.hash()}});
  ad::save_checkpoint(run_dir / "checkpoint.bin", ckpt);
  train::write_loss_csv(run_dir / "loss.csv", result.log);
  std::map<std::string, std::string> summary{
      {"steps", std::to_string(opt.steps)},
      {"train_samples", std::to_string(n_train)},
      {"seconds", pipeline::format_double(result.seconds)},
      {"parameters", std::to_string(m.parameter_count())},
      {"warp_ops_per_forward", std::to_string(m.warp_ops_per_forward())},
      {"final_loss", result.log.empty() ? "nan" : pipeline::format_double(result.log.back().loss)},
      {"no_ptl", cfg.train.no_ptl ? "1" : "0"},
  };
  eval::write_summary(run_dir / "train_summary.txt", summary);
  std::cout << "trained " << opt.steps << " steps in " << std::fixed << std::setprecision(1)
            << result.seconds << " s; checkpoint " << (run_dir / "checkpoint.bin").string()
            << "\n";
  return 0;
}

// eval

void print_summary(const std::map<std::string, std::string>& s) {
  for (const auto& [k, v] : s) std::cout << k << ": " << v << "\n";
}

int cmd_eval_fixture(const config::RunConfig& cfg, const fs::path& preds_path,
                     const fs::path& labels_path, const fs::path& run_dir) {
  const auto preds = tusimple::read(preds_path);
  const auto gts = tusimple::read(labels_path);
  const auto e = pipeline::evaluate(preds, gts, nullptr, nullptr, cfg.camera, cfg.eval,
                                    cfg.eval.bins, cfg.network.classes);
  pipeline::write_report(run_dir, e);
  print_summary(pipeline::summary(e));
  std::cout << "report: " << run_dir.string() << "\n";
  return 0;
}

int cmd_eval_model(const config::RunConfig& cfg, const fs::path& ckpt_path, const fs::path& run_dir) {
  const auto m = model::model_from_checkpoint(ad::load_checkpoint(ckpt_path));
  const auto ds = dataset_for(cfg, run_dir);
  std::size_t first = train_count(cfg, ds);
  if (first == ds.samples.size()) first = 0;  // no holdout: score everything
  std::vector<const scene::SceneSample*> samples;
  for (std::size_t i = first; i < ds.samples.size(); ++i) samples.push_back(&ds.samples[i]);
  const auto p = pipeline::predict_samples(m, samples, cfg.eval.min_lane_pixels);
  std::vector<tusimple::Record> gts;
  std::vector<LabelMap> masks;
  for (const auto* s : samples) {
    gts.push_back(s->lanes);
    masks.push_back(s->semantic);
  }
  const auto e = pipeline::evaluate(p.lanes, gts, &p.semantic, &masks, ds.manifest.camera,
                                    cfg.eval, cfg.eval.bins, m.config().classes);
  pipeline::write_report(run_dir, e,
                         {{"checkpoint", ckpt_path.string()},
                          {"samples", std::to_string(samples.size())},
                          {"warp_ops_per_forward", std::to_string(m.warp_ops_per_forward())}});
  tusimple::write(p.lanes, run_dir / "predictions.json");
  print_summary(pipeline::summary(e));
  std::cout << "report: " << run_dir.string() << "\n";
  return 0;
}

// viz

io::Image8 channel_grid(const ad::Tensor& t) {
  const auto& sh = t.shape();
  const int c = static_cast<int>(sh[0]), h = static_cast<int>(sh[1]), w = static_cast<int>(sh[2]);
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(c))));
  const int rows = (c + cols - 1) / cols;
  io::Image8 img;
  img.channels = 1;
  img.width = cols * (w + 1) - 1;
  img.height = rows * (h + 1) - 1;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
  const auto& v = t.values();
  for (int k = 0; k < c; ++k) {
    const auto begin = v.begin() + static_cast<std::ptrdiff_t>(k) * h * w;
    const auto [lo, hi] = std::minmax_element(begin, begin + h * w);
    const double span = *hi - *lo;
    const int ox = (k % cols) * (w + 1), oy = (k / cols) * (h + 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double u = span > 0 ? (begin[y * w + x] - *lo) / span : 0.0;
        img.pixels[static_cast<std::size_t>(oy + y) * img.width + ox + x] =
            static_cast<std::uint8_t>(std::lround(255.0 * u));
      }
    }
  }
  return img;
}

int cmd_viz(const config::RunConfig& cfg, const fs::path& ckpt_path, const std::string& input,
            std::optional<std::size_t> index, const fs::path& run_dir) {
  const auto m = model::model_from_checkpoint(ad::load_checkpoint(ckpt_path));
  warp::FeatureMap image;
  if (!input.empty()) {
    image = io::to_feature_map(io::read_png(fs::absolute(input), 3));
  } else {
    const auto ds = dataset_for(cfg, run_dir);
    const std::size_t i = index ? *index : train_count(cfg, ds) % std::max<std::size_t>(1, ds.samples.size());
    if (i >= ds.samples.size()) throw ConfigError("--index", "out of range");
    image = ds.samples[i].image;
  }
  fs::create_directories(run_dir);
  ad::Tape tape;
  const auto out = model::forward(tape, m, model::image_tensor(image), true);
  io::write_png(run_dir / "input.png", io::to_image(image));
  for (const auto& s : out.stages) {
    const fs::path p = run_dir / ("stage_" + s.name + ".png");
    io::write_png(p, channel_grid(s.tensor));
    std::cout << p.string() << "\n";
  }
  io::write_png(run_dir / "logits.png", channel_grid(out.logits));
  if (out.embeddings.defined()) io::write_png(run_dir / "embeddings.png", channel_grid(out.embeddings));
  const auto pred = model::predict(m, image);
  auto sem = pred.semantic;
  for (auto& v : sem.values) v = std::min(255, v * 255 / std::max(1, m.config().classes - 1));
  io::write_png(run_dir / "semantic.png", io::to_image(sem));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perspective-transformer lane segmentation toolkit"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--set", common.sets, "Override, section.key=value (repeatable)");
    sub->add_option("--run-dir", common.run_dir, "Output directory (default: output/run-<hash>-<time>)");
  };

  std::optional<int> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> count;
  std::optional<std::size_t> index;
  std::string input, data_dir, out_dir, checkpoint, predictions, labels, bins;
  bool all_steps = false, no_ptl = false, overfit = false, under_horizon = false;

  auto* decompose = app.add_subcommand("decompose", "Print the chain of rotations and homographies");
  add_common(decompose);
  decompose->add_option("--steps", steps, "Number of chain steps");

  auto* warp_cmd = app.add_subcommand("warp", "Warp an image through the chain");
  add_common(warp_cmd);
  warp_cmd->add_option("--input", input, "Input PNG")->required()->check(CLI::ExistingFile);
  warp_cmd->add_flag("--all-steps", all_steps, "Write every prefix of the chain");
  warp_cmd->add_option("--steps", steps, "Number of chain steps");
  warp_cmd->add_option("--out", out_dir, "Output directory (default: run dir)");

  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset");
  add_common(synth);
  synth->add_option("--count", count, "Number of scenes");
  synth->add_option("--seed", seed, "Dataset seed");
  synth->add_option("--out", out_dir, "Dataset directory (default: data.dir or <run dir>/data)");

  auto* train_cmd = app.add_subcommand("train", "Train the segmentation network");
  add_common(train_cmd);
  train_cmd->add_option("--data", data_dir, "Dataset directory");
  train_cmd->add_option("--steps", steps, "Optimizer steps");
  train_cmd->add_option("--seed", seed, "Seed for weights and sample order");
  train_cmd->add_flag("--no-ptl", no_ptl, "Baseline without perspective transforms");
  train_cmd->add_flag("--overfit", overfit, "Train on the first sample only");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or a prediction file");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data_dir, "Dataset directory");
  eval_cmd->add_option("--predictions", predictions, "TuSimple JSON lines")->check(CLI::ExistingFile);
  eval_cmd->add_option("--labels", labels, "Ground-truth TuSimple JSON lines")->check(CLI::ExistingFile);
  eval_cmd->add_option("--bins", bins, "Distance bins")->check(CLI::IsMember({"px", "m"}));
  eval_cmd->add_flag("--under-horizon", under_horizon, "Drop ground truth above the horizon");

  auto* viz = app.add_subcommand("viz", "Write per-stage feature maps as PNG grids");
  add_common(viz);
  viz->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  viz->add_option("--input", input, "Input PNG")->check(CLI::ExistingFile);
  viz->add_option("--data", data_dir, "Dataset directory");
  viz->add_option("--index", index, "Sample index (default: first held-out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    std::vector<std::string> flags;
    if (seed) flags.push_back("seed=" + std::to_string(*seed));
    if (count) flags.push_back("data.count=" + std::to_string(*count));
    if (!data_dir.empty()) flags.push_back("data.dir=" + fs::absolute(data_dir).string());
    if (!bins.empty()) flags.push_back("eval.bins=" + bins);
    if (under_horizon) flags.push_back("eval.under_horizon=true");
    if (no_ptl) flags.push_back("train.no_ptl=true");
    if (overfit) flags.push_back("train.overfit=true");
    if (steps) {
      flags.push_back((app.got_subcommand(train_cmd) ? "train.steps=" : "chain.steps=") +
                      std::to_string(*steps));
    }
    const auto cfg = load_config(common, flags);

    if (app.got_subcommand(decompose)) return cmd_decompose(cfg);
    if (app.got_subcommand(warp_cmd)) {
      const fs::path dir = out_dir.empty() ? run_directory(common, cfg) : fs::absolute(out_dir);
      return cmd_warp(cfg, fs::absolute(input), all_steps, dir);
    }
    if (app.got_subcommand(synth)) {
      fs::path dir;
      if (!out_dir.empty()) {
        dir = fs::absolute(out_dir);
      } else if (!cfg.data.dir.empty()) {
        dir = fs::absolute(cfg.data.dir);
      } else {
        dir = run_directory(common, cfg) / "data";
      }
      return cmd_synth(cfg, dir);
    }
    const fs::path run_dir = run_directory(common, cfg);
    if (app.got_subcommand(train_cmd)) return cmd_train(cfg, run_dir);
    if (app.got_subcommand(eval_cmd)) {
      if (!predictions.empty() || !labels.empty()) {
        if (predictions.empty() || labels.empty()) {
          throw ConfigError("--predictions", "fixture mode needs both --predictions and --labels");
        }
        return cmd_eval_fixture(cfg, fs::absolute(predictions), fs::absolute(labels), run_dir);
      }
      if (checkpoint.empty()) throw ConfigError("--checkpoint", "is required without --predictions");
      return cmd_eval_model(cfg, fs::absolute(checkpoint), run_dir);
    }
    if (app.got_subcommand(viz)) return cmd_viz(cfg, fs::absolute(checkpoint), input, index, run_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
