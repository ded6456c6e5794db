#include <chrono>
#include <fstream>
#include <iomanip>
#include <random>

#include "ptseg/error.hpp"
#include "ptseg/train.hpp"

namespace ptseg::train {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t& state) {
  std::mt19937_64 rng(state);
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
  state = rng();
  return v;
}

TrainResult train(model::PTSegModel& model, const std::vector<Example>& examples,
                  const TrainOptions& options,
                  const std::function<void(const LogEntry&)>& on_step) {
  if (examples.empty()) throw Error(ErrorCode::InvalidArgument, "no training examples");
  if (options.batch_size < 1 || options.steps < 0) {
    throw Error(ErrorCode::InvalidArgument, "batch size must be >= 1 and steps >= 0");
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  result.adam.options = options.adam;
  std::vector<ad::Tensor> params = model.parameter_tensors();
  std::uint64_t state = options.seed;
  std::vector<std::size_t> order;
  std::size_t cursor = 0;

  for (int step = 1; step <= options.steps; ++step) {
    for (auto& p : params) p.zero_grad();
    ad::Tape tape;
    ad::Tensor total;
    LogEntry entry{step};
    for (int b = 0; b < options.batch_size; ++b) {
      if (cursor == order.size()) {
        order = shuffled_indices(examples.size(), state);
        cursor = 0;
      }
      const Example& ex = examples[order[cursor++]];
      const auto out = model::forward(tape, model, model::image_tensor(*ex.image));
      const auto terms = model::loss(tape, model, out, *ex.semantic, *ex.instance);
      total = total.defined() ? ad::add(tape, total, terms.total) : terms.total;
      entry.cross_entropy += terms.cross_entropy / options.batch_size;
      entry.discriminative += terms.discriminative / options.batch_size;
    }
    total = ad::scale(tape, total, 1.0 / options.batch_size);
    entry.loss = total.item();
    tape.backward(total);
    ad::adam_step(params, result.adam);
    result.log.push_back(entry);
    if (on_step) on_step(entry);
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LogEntry>& log) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << std::setprecision(17) << "step,loss,ce,disc\n";
  for (const auto& e : log) {
    out << e.step << ',' << e.loss << ',' << e.cross_entropy << ',' << e.discriminative << '\n';
  }
}

}  // namespace ptseg::train
