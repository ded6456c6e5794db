#include <Eigen/Dense>

#include <algorithm>
#include <string>

#include "ptseg/autodiff.hpp"
#include "ptseg/error.hpp"
#include "ptseg/warp.hpp"

namespace ptseg::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

int ceil_div(int a, int b) { return (a + b - 1) / b; }

void require_rank3(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 3) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " must be a [C, H, W] tensor");
  }
}

// Geometry of a same-padded convolution from an "image" side (C x H x W) to a
// "column" side (ceil(H/s) x ceil(W/s)).
struct ConvGeometry {
  int channels, height, width;  // image side
  int kernel, stride, pad;
  int out_h, out_w;

  std::size_t rows() const { return static_cast<std::size_t>(channels) * kernel * kernel; }
  std::size_t cols() const { return static_cast<std::size_t>(out_h) * out_w; }
};

ConvGeometry make_geometry(int c, int h, int w, int k, int s) {
  return {c, h, w, k, s, (k - 1) / 2, ceil_div(h, s), ceil_div(w, s)};
}

// cols[(c, ky, kx), (oy, ox)] = image[c, oy*s - p + ky, ox*s - p + kx] (0 outside)
void im2col(const ConvGeometry& g, const double* image, double* cols) {
  const std::size_t ncols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    const double* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * ncols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: image += scatter(cols).
void col2im(const ConvGeometry& g, const double* cols, double* image) {
  const std::size_t ncols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    double* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const double* row =
            cols + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * ncols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const double* src = row + static_cast<std::size_t>(oy) * g.out_w;
          double* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_kernel(const Tensor& weight, int in_channels, bool transposed) {
  if (!weight.defined() || weight.rank() != 4 || weight.dim(2) != weight.dim(3) ||
      weight.dim(2) % 2 == 0) {
    throw Error(ErrorCode::ShapeMismatch, "weight must be [C_out, C_in, k, k] with odd k");
  }
  const int expected = transposed ? weight.dim(0) : weight.dim(1);
  if (expected != in_channels) {
    throw Error(ErrorCode::ShapeMismatch,
                "weight " + shape_string(weight.shape()) + " does not accept " +
                    std::to_string(in_channels) + " input channels");
  }
}

void check_bias(const Tensor& bias, int channels) {
  if (!bias.defined() || bias.numel() != static_cast<std::size_t>(channels)) {
    throw Error(ErrorCode::ShapeMismatch, "bias needs one entry per output channel");
  }
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
  return std::any_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->requires_grad(); });
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride) {
  require_rank3(input, "conv2d input");
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  const int cin = input.dim(0);
  check_kernel(weight, cin, false);
  const int cout = weight.dim(0);
  check_bias(bias, cout);
  const ConvGeometry g = make_geometry(cin, input.dim(1), input.dim(2), weight.dim(2), stride);

  auto cols = std::make_shared<std::vector<double>>(g.rows() * g.cols());
  im2col(g, input.values().data(), cols->data());

  const bool rg = any_grad({&input, &weight, &bias});
  Tensor out(Shape{cout, g.out_h, g.out_w}, rg);
  {
    MatMap o(out.values().data(), cout, static_cast<Eigen::Index>(g.cols()));
    const ConstMatMap w(weight.values().data(), cout, static_cast<Eigen::Index>(g.rows()));
    const ConstMatMap c(cols->data(), static_cast<Eigen::Index>(g.rows()),
                        static_cast<Eigen::Index>(g.cols()));
    o.noalias() = w * c;
    const auto b = bias.values();
    for (int co = 0; co < cout; ++co) o.row(co).array() += b[static_cast<std::size_t>(co)];
  }
  if (!rg) return out;

  tape.record("conv2d", [=]() mutable {
    if (!out.has_grad()) return;
    const ConstMatMap go(out.grad().data(), cout, static_cast<Eigen::Index>(g.cols()));
    if (weight.requires_grad()) {
      MatMap gw(weight.grad_buffer().data(), cout, static_cast<Eigen::Index>(g.rows()));
      const ConstMatMap c(cols->data(), static_cast<Eigen::Index>(g.rows()),
                          static_cast<Eigen::Index>(g.cols()));
      gw.noalias() += go * c.transpose();
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad_buffer();
      // Plain loop: Eigen's vectorised sum peels by address alignment, which
      // would make the result depend on where the heap placed the buffer.
      const auto gov = out.grad();
      const std::size_t plane = g.cols();
      for (int co = 0; co < cout; ++co) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += gov[co * plane + p];
        gb[static_cast<std::size_t>(co)] += s;
      }
    }
    if (input.requires_grad()) {
      std::vector<double> gcols(g.rows() * g.cols());
      MatMap gc(gcols.data(), static_cast<Eigen::Index>(g.rows()),
                static_cast<Eigen::Index>(g.cols()));
      const ConstMatMap w(weight.values().data(), cout, static_cast<Eigen::Index>(g.rows()));
      gc.noalias() = w.transpose() * go;
      col2im(g, gcols.data(), input.grad_buffer().data());
    }
  });
  return out;
}

Tensor conv2d_transpose(Tape& tape, const Tensor& input, const Tensor& weight,
                        const Tensor& bias, int stride, int out_h, int out_w) {
  require_rank3(input, "conv2d_transpose input");
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  const int cin = input.dim(0);
  check_kernel(weight, cin, true);
  const int cout = weight.dim(1);
  check_bias(bias, cout);
  if (out_h == 0) out_h = input.dim(1) * stride;
  if (out_w == 0) out_w = input.dim(2) * stride;
  if (out_h < 1 || out_w < 1 || ceil_div(out_h, stride) != input.dim(1) ||
      ceil_div(out_w, stride) != input.dim(2)) {
    throw Error(ErrorCode::ShapeMismatch,
                "output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                    " is not reachable from input " + shape_string(input.shape()) +
                    " at stride " + std::to_string(stride));
  }
  // The conv this is the adjoint of runs from the output side to the input side.
  const ConvGeometry g = make_geometry(cout, out_h, out_w, weight.dim(2), stride);
  const Eigen::Index rows = static_cast<Eigen::Index>(g.rows());
  const Eigen::Index ncols = static_cast<Eigen::Index>(g.cols());

  const bool rg = any_grad({&input, &weight, &bias});
  Tensor out(Shape{cout, out_h, out_w}, rg);
  {
    std::vector<double> cols(g.rows() * g.cols());
    MatMap c(cols.data(), rows, ncols);
    const ConstMatMap w(weight.values().data(), cin, rows);
    const ConstMatMap x(input.values().data(), cin, ncols);
    c.noalias() = w.transpose() * x;
    col2im(g, cols.data(), out.values().data());
    const auto b = bias.values();
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
    auto ov = out.values();
    for (int co = 0; co < cout; ++co) {
      for (std::size_t p = 0; p < plane; ++p) ov[co * plane + p] += b[static_cast<std::size_t>(co)];
    }
  }
  if (!rg) return out;

  tape.record("conv2d_transpose", [=]() mutable {
    if (!out.has_grad()) return;
    std::vector<double> gcols(g.rows() * g.cols());
    im2col(g, out.grad().data(), gcols.data());
    const ConstMatMap gc(gcols.data(), rows, ncols);
    if (weight.requires_grad()) {
      MatMap gw(weight.grad_buffer().data(), cin, rows);
      const ConstMatMap x(input.values().data(), cin, ncols);
      gw.noalias() += x * gc.transpose();
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad_buffer();
      const auto go = out.grad();
      const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
      for (int co = 0; co < cout; ++co) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += go[co * plane + p];
        gb[static_cast<std::size_t>(co)] += s;
      }
    }
    if (input.requires_grad()) {
      MatMap gx(input.grad_buffer().data(), cin, ncols);
      const ConstMatMap w(weight.values().data(), cin, rows);
      gx.noalias() += w * gc;
    }
  });
  return out;
}

Tensor relu(Tape& tape, const Tensor& input) {
  Tensor out(input.shape(), input.requires_grad());
  const auto x = input.values();
  auto y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (!input.requires_grad()) return out;
  tape.record("relu", [=]() mutable {
    if (!out.has_grad()) return;
    const auto go = out.grad();
    const auto xv = input.values();
    auto gi = input.grad_buffer();
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (xv[i] > 0.0) gi[i] += go[i];
    }
  });
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                "add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor out(a.shape(), rg);
  auto y = out.values();
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  if (!rg) return out;
  tape.record("add", [=]() mutable {
    if (!out.has_grad()) return;
    const auto go = out.grad();
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gi = t->grad_buffer();
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
  });
  return out;
}

Tensor scale(Tape& tape, const Tensor& input, double factor) {
  Tensor out(input.shape(), input.requires_grad());
  const auto x = input.values();
  auto y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = factor * x[i];
  if (!input.requires_grad()) return out;
  tape.record("scale", [=]() mutable {
    if (!out.has_grad()) return;
    const auto go = out.grad();
    auto gi = input.grad_buffer();
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += factor * go[i];
  });
  return out;
}

Tensor sum(Tape& tape, const Tensor& input) {
  double s = 0.0;
  for (double v : input.values()) s += v;
  Tensor out = Tensor::scalar(s, input.requires_grad());
  if (!input.requires_grad()) return out;
  tape.record("sum", [=]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0];
    for (double& gi : input.grad_buffer()) gi += g;
  });
  return out;
}

Tensor weighted_sum(Tape& tape, const Tensor& input, std::span<const double> weights) {
  if (weights.size() != input.numel()) {
    throw Error(ErrorCode::ShapeMismatch, "weighted_sum needs one weight per element");
  }
  double s = 0.0;
  const auto x = input.values();
  for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
  Tensor out = Tensor::scalar(s, input.requires_grad());
  if (!input.requires_grad()) return out;
  auto w = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
  tape.record("weighted_sum", [=]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad()[0];
    auto gi = input.grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g * (*w)[i];
  });
  return out;
}

Tensor warp(Tape& tape, const Tensor& input, std::shared_ptr<const warp::SamplingPlan> plan) {
  require_rank3(input, "warp input");
  if (input.dim(1) != plan->source_height() || input.dim(2) != plan->source_width()) {
    throw Error(ErrorCode::ShapeMismatch,
                "warp input " + shape_string(input.shape()) + " does not match source viewport " +
                    std::to_string(plan->source_height()) + "x" +
                    std::to_string(plan->source_width()));
  }
  const int channels = input.dim(0);
  Tensor out(Shape{channels, plan->target_height(), plan->target_width()},
             input.requires_grad());
  plan->forward(input.values(), out.values(), channels);
  // Recorded even without gradients so the tape reflects every PTL applied.
  tape.record("warp", [=]() mutable {
    if (!out.has_grad() || !input.requires_grad()) return;
    plan->adjoint(out.grad(), input.grad_buffer(), channels);
  });
  return out;
}

}  // namespace ptseg::ad
