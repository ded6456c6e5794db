#include <algorithm>
#include <cmath>

#include "ptseg/autodiff.hpp"

namespace ptseg::ad {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (double e : max_relative_error) w = std::max(w, e);
  return w;
}

GradCheckReport finite_diff_check(const ScalarFunction& fn, std::vector<Tensor> inputs,
                                  const GradCheckOptions& options) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    const Tensor loss = fn(tape);
    tape.backward(loss);
  }
  if (options.after_backward) options.after_backward(inputs);

  const double h = options.step;
  std::vector<std::vector<double>> analytic, numeric;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k];
    analytic.push_back(x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                    : std::vector<double>(x.numel(), 0.0));
    numeric.emplace_back(x.numel(), 0.0);
    auto values = x.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (options.skip && options.skip(k, i)) continue;
      const double original = values[i];
      values[i] = original + h;
      double plus, minus;
      {
        Tape tape;
        plus = fn(tape).item();
      }
      values[i] = original - h;
      {
        Tape tape;
        minus = fn(tape).item();
      }
      values[i] = original;
      numeric[k][i] = (plus - minus) / (2.0 * h);
    }
  }

  auto largest = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double n : v) m = std::max(m, std::abs(n));
    return m;
  };
  double global = 0.0;
  for (const auto& n : numeric) global = std::max(global, largest(n));

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const double scale = options.global_scale ? global : largest(numeric[k]);
    const double floor = std::max(1e-3 * scale, 1e-12);
    double max_rel = 0.0;
    double max_abs = 0.0;
    for (std::size_t i = 0; i < numeric[k].size(); ++i) {
      if (options.skip && options.skip(k, i)) continue;
      const double diff = std::abs(analytic[k][i] - numeric[k][i]);
      const double denom = std::max({std::abs(analytic[k][i]), std::abs(numeric[k][i]), floor});
      max_rel = std::max(max_rel, diff / denom);
      max_abs = std::max(max_abs, diff);
    }
    report.max_relative_error.push_back(max_rel);
    report.max_absolute_error.push_back(max_abs);
  }
  report.passed = report.worst() <= options.tolerance;
  return report;
}

}  // namespace ptseg::ad
