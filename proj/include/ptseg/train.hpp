#pragma once

// Mini-batch training of a PTSegModel with Adam on one tape per step.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "ptseg/autodiff.hpp"
#include "ptseg/label_map.hpp"
#include "ptseg/model.hpp"
#include "ptseg/warp.hpp"

namespace ptseg::train {

struct Example {
  const warp::FeatureMap* image = nullptr;
  const LabelMap* semantic = nullptr;
  const LabelMap* instance = nullptr;
};

struct TrainOptions {
  int steps = 1000;
  int batch_size = 2;
  ad::AdamOptions adam{1e-3};
  std::uint64_t seed = 0;  // sample order
};

struct LogEntry {
  int step = 0;
  double loss = 0.0;
  double cross_entropy = 0.0;
  double discriminative = 0.0;
};

struct TrainResult {
  std::vector<LogEntry> log;
  ad::AdamState adam;
  double seconds = 0.0;
};

/// Draws samples epoch by epoch in a shuffled order (Fisher-Yates on a
/// generator seeded by `options.seed`); the batch loss is the mean of the
/// per-sample losses.
TrainResult train(model::PTSegModel& model, const std::vector<Example>& examples,
                  const TrainOptions& options,
                  const std::function<void(const LogEntry&)>& on_step = {});

/// Permutation of 0..n-1 from the generator.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t& state);

/// Columns step, loss, ce, disc at full precision.
void write_loss_csv(const std::filesystem::path& path, const std::vector<LogEntry>& log);

}  // namespace ptseg::train
