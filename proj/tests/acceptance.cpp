// Acceptance harness: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--out DIR]
//
// Criteria 8 and 9 train four networks (about a quarter of an hour on one
// core); their artifacts land under --out (default ./acceptance_out).

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ptseg/autodiff.hpp"
#include "ptseg/config.hpp"
#include "ptseg/error.hpp"
#include "ptseg/eval.hpp"
#include "ptseg/geometry.hpp"
#include "ptseg/model.hpp"
#include "ptseg/pipeline.hpp"
#include "ptseg/scene.hpp"
#include "ptseg/train.hpp"
#include "ptseg/warp.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace ptseg;
using geometry::Mat3;
using geometry::Vec3;

namespace {

// Tolerances.
constexpr double kCompositionTol = 1e-9;
constexpr double kCompositionSeconds = 2.0;
constexpr double kNormalTol = 1e-10;
constexpr double kViewportTol = 1e-9;
constexpr double kEquivalenceTol = 1e-9;
constexpr double kAdjointTol = 1e-10;
constexpr double kGradTol = 1e-4;
// Rational metric fixtures: a few ulps of rounding.
constexpr double kExactTol = 1e-15;
constexpr double kRoundTripPsnr = 30.0;
constexpr double kTrainBudgetSeconds = 15.0 * 60.0;
constexpr double kMinLaneIou = 0.6;
constexpr double kClusterOverlap = 0.8;
constexpr int kClusterMinCount = 3;

constexpr double kPi = std::numbers::pi;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Mat3 skew(const Vec3& w) {
  Mat3 k;
  k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return k;
}

// exp of a skew matrix by its power series.
Mat3 expm_series(const Vec3& w) {
  const Mat3 k = skew(w);
  Mat3 sum = Mat3::Identity(), term = Mat3::Identity();
  for (int n = 1; n < 40; ++n) {
    term = term * k / static_cast<double>(n);
    sum += term;
  }
  return sum;
}

// Smallest rotation taking unit vector a onto unit vector b.
Mat3 align(const Vec3& a, const Vec3& b) {
  const Vec3 v = a.cross(b);
  const double c = a.dot(b);
  const Mat3 k = skew(v);
  return Mat3::Identity() + k + k * k / (1.0 + c);
}

Mat3 normalized(const Mat3& m) {
  Mat3 n = m / m.norm();
  // Fix the projective sign by the largest entry.
  Eigen::Index r, c;
  n.cwiseAbs().maxCoeff(&r, &c);
  return n(r, c) < 0 ? Mat3(-n) : n;
}

// 1. Composition of the step homographies equals the one-shot homography.

Outcome criterion_composition() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  int built = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 1000; ++i) {
    const auto cam = ptseg::testing::random_road_camera(rng);
    const int n = 1 + static_cast<int>(rng() % 6);
    std::vector<int> widths;
    for (int k = 0; k < n; ++k) widths.push_back(24 + static_cast<int>(rng() % 256));
    const auto chain =
        geometry::build_ptl_chain(cam.view, cam.horizon(), cam.ground_keypoints(5, 3, 30), n, widths);
    Mat3 product = Mat3::Identity();
    for (const auto& s : chain.steps) product = s.homography.matrix() * product;
    // One-shot: rotate the ground normal onto the optical axis, final viewport.
    const Mat3 r = align(cam.normal(), Vec3::UnitZ());
    const Mat3 one_shot = chain.target().intrinsics.matrix() * r * cam.view.intrinsics.inverse();
    worst = std::max(worst, (normalized(product) - normalized(one_shot)).norm());
    ++built;
  }
  const double secs = seconds_since(t0);
  return {worst <= kCompositionTol && secs < kCompositionSeconds && built == 1000,
          std::to_string(built) + " chains, worst rel. Frobenius " + fmt(worst) + " (tol " +
              fmt(kCompositionTol) + "), " + fmt(secs) + " s (limit " + fmt(kCompositionSeconds) + " s)"};
}

// 2. Horizon to ground normal to axis-angle.

Outcome criterion_horizon() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g;
  double worst_normal = 0.0, worst_exp = 0.0;
  int cases = 0;
  while (cases < 1000) {
    const Vec3 n = ptseg::testing::random_unit(rng);
    if (n.z() < -0.9 || std::abs(n.z()) > 0.995) continue;  // horizon must cross the view
    const geometry::CameraIntrinsics k{50 + 200 * u(rng), 200 * u(rng), 200 * u(rng)};
    // Two directions on the horizon (perpendicular to n) in front of the camera.
    const Vec3 e = n.cross(Vec3::UnitZ()).normalized();
    const Vec3 f = n.cross(e).normalized();
    Vec3 d1 = e + 0.3 * g(rng) * f, d2 = -e + 0.3 * g(rng) * f;
    d1 -= n * n.dot(d1);
    d2 -= n * n.dot(d2);
    if (d1.z() <= 1e-3 || d2.z() <= 1e-3) continue;
    Vec3 p1 = k.matrix() * d1, p2 = k.matrix() * d2;
    p1 /= p1.z();
    p2 /= p2.z();
    // Order so that left x right faces the ground.
    const Vec3 a = k.inverse() * p1, b = k.inverse() * p2;
    const bool swap = a.cross(b).dot(n) < 0;
    const Vec3 est = geometry::horizon_to_ground_normal(k.inverse() * (swap ? p2 : p1),
                                                        k.inverse() * (swap ? p1 : p2));
    worst_normal = std::max(worst_normal, (est - n).norm());
    const Vec3 w = geometry::ground_normal_to_axis_angle(est);
    worst_exp = std::max(worst_exp, (expm_series(w) * Vec3::UnitZ() - n).norm());
    ++cases;
  }
  const Vec3 zero = geometry::ground_normal_to_axis_angle(Vec3::UnitZ());
  const bool degenerate_ok = zero == Vec3::Zero();
  return {worst_normal <= kNormalTol && worst_exp <= kNormalTol && degenerate_ok,
          std::to_string(cases) + " horizons, |n_est - n| " + fmt(worst_normal) +
              ", |exp(w) e3 - n| " + fmt(worst_exp) + " (tol " + fmt(kNormalTol) +
              "); n = e3 gives w = 0: " + (degenerate_ok ? "yes" : "no")};
}

// 3. Viewport tightness.

Outcome criterion_viewport() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int outside = 0;
  for (int i = 0; i < 500; ++i) {
    const geometry::CameraIntrinsics k{40 + 200 * u(rng), 300 * u(rng), 300 * u(rng)};
    const Vec3 w = 0.8 * Vec3(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
    const auto r = geometry::axis_angle_to_rotation(w);
    const Mat3 rm = expm_series(w);
    std::vector<Vec3> pts;
    const int count = 3 + static_cast<int>(rng() % 8);
    while (static_cast<int>(pts.size()) < count) {
      const Vec3 p(k.cx + k.f * 1.5 * (u(rng) - 0.5), k.cy + k.f * 1.5 * (u(rng) - 0.5), 1.0);
      if ((rm * (k.inverse() * p)).z() > 0.05) pts.push_back(p);  // front-facing after rotation
    }
    const int width = 8 + static_cast<int>(rng() % 500);
    const auto vp = geometry::optimal_viewport(k, r, geometry::KeyPointSet(pts), width);
    double minx = 1e300, miny = 1e300, maxx = -1e300, maxy = -1e300;
    for (const auto& p : pts) {
      const Vec3 q = vp.intrinsics.matrix() * (rm * (k.inverse() * p));
      const double x = q.x() / q.z(), y = q.y() / q.z();
      minx = std::min(minx, x);
      miny = std::min(miny, y);
      maxx = std::max(maxx, x);
      maxy = std::max(maxy, y);
      if (x < -kViewportTol || y < -kViewportTol || x > width + kViewportTol ||
          y > vp.height + kViewportTol) {
        ++outside;
      }
    }
    worst = std::max({worst, std::abs(minx), std::abs(miny), std::abs(maxx - width)});
  }
  return {outside == 0 && worst <= kViewportTol,
          "500 key-point sets, " + std::to_string(outside) +
              " points outside [0,W]x[0,H_next], worst |min x|,|min y|,|max x - W| " + fmt(worst) +
              " (tol " + fmt(kViewportTol) + ")"};
}

// 4. A translated camera equals a pure rotation with modified intrinsics on the plane.

Outcome criterion_equivalence() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_modified = 0.0, worst_plane = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double f = 50 + 200 * u(rng);
    const geometry::ViewSpec src{{f, 200 * u(rng), 200 * u(rng)}, 200, 200};
    const double d = 1.0 + 4.0 * u(rng);
    const Vec3 t(2 * (u(rng) - 0.5), 2 * (u(rng) - 0.5), 0.8 * d * (u(rng) - 0.5));
    // Plane z = d in the first camera, second camera moved by t, same orientation.
    const double s = d / (d - t.z());
    const geometry::ViewSpec modified{
        {f * s, src.intrinsics.cx - f * t.x() / (d - t.z()), src.intrinsics.cy - f * t.y() / (d - t.z())},
        src.width, src.height};
    const auto h_mod = geometry::pure_rotation_homography(src, modified, geometry::RotationMatrix());
    const auto h_plane = geometry::plane_induced_homography(src, src, geometry::RotationMatrix(), t,
                                                            {Vec3::UnitZ(), d});
    for (int k = 0; k < 5; ++k) {
      const Vec3 x(4 * (u(rng) - 0.5), 4 * (u(rng) - 0.5), d);  // on the plane
      const Vec3 p = src.intrinsics.matrix() * x;
      const Vec3 q = src.intrinsics.matrix() * (x - t);  // seen by the moved camera
      const Eigen::Vector2d truth(q.x() / q.z(), q.y() / q.z());
      worst_modified = std::max(worst_modified, (h_mod.transfer(p.x() / p.z(), p.y() / p.z()) - truth).norm());
      worst_plane = std::max(worst_plane, (h_plane.transfer(p.x() / p.z(), p.y() / p.z()) - truth).norm());
    }
  }
  return {worst_modified <= kEquivalenceTol && worst_plane <= kEquivalenceTol,
          "200 cases x 5 points, modified-intrinsics transfer error " + fmt(worst_modified) +
              " px, plane-induced " + fmt(worst_plane) + " px (tol " + fmt(kEquivalenceTol) + ")"};
}

// 5. Differentiability.

ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(n);
  for (auto& v : w) v = u(rng);
  return w;
}

double dot(std::span<const double> a, std::span<const double> b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

double rel_gap(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

// A 24x24 road camera with a three-step chain; small enough for exhaustive
// finite differences.
model::NetworkConfig tiny_network() {
  auto cam = ptseg::testing::default_road_camera();
  cam.view = {{12.0, 11.5, 11.5}, 24, 24};
  cam.depression = 0.3;
  model::NetworkConfig c;
  c.depth = 3;
  c.base_channels = 2;
  c.input_channels = 3;
  c.embedding_dims = 2;
  c.chain = model::network_chain(cam.view, cam.horizon(), cam.ground_keypoints(2.0, 3.0, 12.0).points(), 3);
  return c;
}

Outcome criterion_differentiability() {
  std::mt19937_64 rng(505);
  std::ostringstream detail;
  bool pass = true;

  // Adjoint identities.
  double worst_warp = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto cam = ptseg::testing::random_road_camera(rng);
    const auto chain = geometry::build_ptl_chain(cam.view, cam.horizon(), cam.ground_keypoints(5, 3, 30),
                                                 2, {48, 32});
    for (const auto& step : chain.steps) {
      for (int stride : {1, 2, 4}) {
        const warp::SamplingPlan plan(warp::scale_homography_for_stride(step.homography, stride));
        const int c = 2;
        const auto x = random_weights(static_cast<std::size_t>(c) * plan.source_height() * plan.source_width(), rng);
        const auto y = random_weights(static_cast<std::size_t>(c) * plan.target_height() * plan.target_width(), rng);
        std::vector<double> wx(y.size()), wty(x.size());
        plan.forward(x, wx, c);
        plan.adjoint(y, wty, c);
        worst_warp = std::max(worst_warp, rel_gap(dot(wx, y), dot(x, wty)));
      }
    }
  }
  double worst_convt = 0.0;
  for (auto [h, w, s] : {std::tuple{7, 9, 2}, std::tuple{16, 11, 2}, std::tuple{9, 9, 3}, std::tuple{6, 6, 1}}) {
    ad::Tape tape;
    const auto weight = random_tensor({3, 2, 3, 3}, rng);
    const auto x = random_tensor({2, h, w}, rng);
    const auto cx = ad::conv2d(tape, x, weight, ad::Tensor({3}), s);
    const auto y = random_tensor(cx.shape(), rng);
    const auto ty = ad::conv2d_transpose(tape, y, weight, ad::Tensor({2}), s, h, w);
    worst_convt = std::max(worst_convt, rel_gap(dot(cx.values(), y.values()), dot(x.values(), ty.values())));
  }
  pass &= worst_warp <= kAdjointTol && worst_convt <= kAdjointTol;
  detail << "adjoint warp " << fmt(worst_warp) << ", convT " << fmt(worst_convt);

  // Finite differences.
  ad::GradCheckOptions opt;
  opt.tolerance = kGradTol;
  std::map<std::string, double> fd;
  {
    const auto cam = ptseg::testing::default_road_camera();
    const auto chain = geometry::build_ptl_chain(cam.view, cam.horizon(), cam.ground_keypoints(6, 4, 20), 1, {32});
    const auto h = warp::scale_homography_for_stride(chain.steps[0].homography, 8);
    auto plan = std::make_shared<const warp::SamplingPlan>(h);
    const auto x = random_tensor({2, h.source().height, h.source().width}, rng);
    const auto probe = random_weights(2 * static_cast<std::size_t>(h.target().height) * h.target().width, rng);
    fd["warp"] = ad::finite_diff_check(
                     [&](ad::Tape& t) { return ad::weighted_sum(t, ad::warp(t, x, plan), probe); }, {x}, opt)
                     .worst();
  }
  {
    const auto x = random_tensor({2, 7, 6}, rng);
    const auto w = random_tensor({3, 2, 3, 3}, rng);
    const auto b = random_tensor({3}, rng);
    const auto probe = random_weights(3 * 4 * 3, rng);
    fd["conv"] = ad::finite_diff_check(
                     [&](ad::Tape& t) { return ad::weighted_sum(t, ad::conv2d(t, x, w, b, 2), probe); },
                     {x, w, b}, opt)
                     .worst();
  }
  {
    const auto x = random_tensor({3, 3, 4}, rng);
    const auto w = random_tensor({3, 2, 3, 3}, rng);
    const auto b = random_tensor({2}, rng);
    const auto probe = random_weights(2 * 5 * 8, rng);
    fd["convT"] = ad::finite_diff_check(
                      [&](ad::Tape& t) {
                        return ad::weighted_sum(t, ad::conv2d_transpose(t, x, w, b, 2, 5, 8), probe);
                      },
                      {x, w, b}, opt)
                      .worst();
  }
  {
    const auto logits = random_tensor({3, 5, 6}, rng, -3, 3);
    LabelMap labels(5, 6);
    for (auto& v : labels.values) v = static_cast<int>(rng() % 4) - 1;  // includes ignore
    const std::vector<double> weights{0.5, 2.0, 1.0};
    fd["cross-entropy"] = ad::finite_diff_check(
                              [&](ad::Tape& t) { return ad::softmax_cross_entropy(t, logits, labels, -1, weights); },
                              {logits}, opt)
                              .worst();
  }
  {
    const auto emb = random_tensor({3, 6, 7}, rng, -2, 2);
    LabelMap inst(6, 7);
    for (auto& v : inst.values) v = static_cast<int>(rng() % 4);
    fd["discriminative"] = ad::finite_diff_check(
                               [&](ad::Tape& t) { return ad::discriminative_loss(t, emb, inst, 0.5, 1.5); },
                               {emb}, opt)
                               .worst();
  }
  {
    const auto cfg = tiny_network();
    const auto m = model::build_model(cfg, 7);
    const auto img = random_tensor({3, 24, 24}, rng, -0.5, 0.5);
    LabelMap sem(24, 24), inst(24, 24);
    for (int y = 0; y < 24; ++y) {
      for (int x = 0; x < 24; ++x) {
        if (x == 6 || x == 7) inst.at(y, x) = 1;
        if (x == 16) inst.at(y, x) = 2;
        sem.at(y, x) = inst.at(y, x) > 0 ? 1 : 0;
      }
    }
    std::vector<ad::Tensor> inputs{img};
    // Zero-initialised biases put ReLU inputs exactly on the kink wherever a
    // channel is dead, so the check runs at a jittered parameter point.
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    for (auto p : m.parameter_tensors()) {
      for (auto& v : p.values()) v += jitter(rng);
      inputs.push_back(p);
    }
    // Deep encoder weights have gradients near 1e-5 and the embedding bias an
    // exact zero (the instance loss is translation invariant); roundoff in the
    // differences is about 1e-8, so the floor comes from the whole network.
    ad::GradCheckOptions net = opt;
    net.global_scale = true;
    fd["network"] = ad::finite_diff_check(
                        [&](ad::Tape& t) {
                          const auto out = model::forward(t, m, img);
                          return model::loss(t, m, out, sem, inst).total;
                        },
                        inputs, net)
                        .worst();
  }
  for (const auto& [name, worst] : fd) {
    pass &= worst <= kGradTol;
    detail << ", " << name << " " << fmt(worst);
  }

  // Mutations: a perturbed gradient entry, and a warp whose backward uses the
  // adjoint of a slightly different homography.
  bool caught_entry = false, caught_transpose = false;
  {
    const auto x = random_tensor({2, 5, 5}, rng);
    const auto w = random_tensor({3, 2, 3, 3}, rng);
    const auto b = random_tensor({3}, rng);
    const auto probe = random_weights(75, rng);
    ad::GradCheckOptions bad = opt;
    bad.after_backward = [](std::vector<ad::Tensor>& in) { in[1].grad_buffer()[4] *= 1.01; };
    caught_entry = !ad::finite_diff_check(
                        [&](ad::Tape& t) { return ad::weighted_sum(t, ad::conv2d(t, x, w, b, 1), probe); },
                        {x, w, b}, bad)
                        .passed;
  }
  {
    const auto cam = ptseg::testing::default_road_camera();
    const auto chain = geometry::build_ptl_chain(cam.view, cam.horizon(), cam.ground_keypoints(6, 4, 20), 1, {32});
    const auto h = warp::scale_homography_for_stride(chain.steps[0].homography, 8);
    Mat3 off = h.matrix();
    off(0, 2) += 0.02 * off(2, 2);
    auto plan = std::make_shared<const warp::SamplingPlan>(h);
    auto wrong = std::make_shared<const warp::SamplingPlan>(geometry::Homography(off, h.source(), h.target()));
    const auto x = random_tensor({1, h.source().height, h.source().width}, rng);
    const auto probe = random_weights(static_cast<std::size_t>(h.target().height) * h.target().width, rng);
    auto mutated_warp = [&](ad::Tape& tape, const ad::Tensor& in) {
      ad::Tensor out({1, plan->target_height(), plan->target_width()}, in.requires_grad());
      plan->forward(in.values(), out.values(), 1);
      tape.record("warp", [=]() mutable {
        if (out.has_grad() && in.requires_grad()) wrong->adjoint(out.grad(), in.grad_buffer(), 1);
      });
      return out;
    };
    caught_transpose = !ad::finite_diff_check(
                            [&](ad::Tape& t) { return ad::weighted_sum(t, mutated_warp(t, x), probe); }, {x}, opt)
                            .passed;
  }
  pass &= caught_entry && caught_transpose;
  detail << " (tol " << fmt(kGradTol) << "); mutations caught: gradient entry "
         << (caught_entry ? "yes" : "no") << ", mis-transposed warp " << (caught_transpose ? "yes" : "no");
  return {pass, detail.str()};
}

// 6. Warp round trip.

Outcome criterion_round_trip() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 1e300;
  const int cases = 20;
  long interior_total = 0;
  for (int i = 0; i < cases; ++i) {
    // Key points have to lie on visible road; steep cameras can miss 4-15 m.
    auto cam = ptseg::testing::random_road_camera(rng);
    auto visible = [](const ptseg::testing::RoadCamera& c) {
      const auto kp = c.ground_keypoints(4, 4, 15);
      for (const auto& p : kp.points()) {
        if (p.x() < 0 || p.y() < 0 || p.x() > c.view.width - 1 || p.y() > c.view.height - 1) return false;
      }
      return true;
    };
    while (!visible(cam)) cam = ptseg::testing::random_road_camera(rng);
    const int w = cam.view.width, h = cam.view.height;
    const int n = 1 + static_cast<int>(rng() % 4);
    const auto chain = geometry::build_ptl_chain(cam.view, cam.horizon(), cam.ground_keypoints(4, 4, 15), n,
                                                 std::vector<int>(n, w));
    const auto inverse = geometry::invert_chain(chain);

    warp::FeatureMap img(warp::Shape3{1, h, w});
    for (int b = 0; b < 12; ++b) {
      const double bx = w * u(rng), by = h * u(rng), s = 0.05 * std::min(w, h) * (1 + u(rng));
      const double a = 0.3 + 0.7 * u(rng);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          img.at(0, y, x) += a * std::exp(-((x - bx) * (x - bx) + (y - by) * (y - by)) / (2 * s * s));
        }
      }
    }
    auto fm = img;
    for (const auto& s : chain.steps) fm = warp::warp_forward(fm, s.homography);
    for (const auto& s : inverse.steps) fm = warp::warp_forward(fm, s.homography);

    // Interior: pixels whose image under every prefix stays 2 px inside that view.
    double se = 0.0, peak = 0.0;
    long count = 0;
    for (int y = 2; y < h - 2; ++y) {
      for (int x = 2; x < w - 2; ++x) {
        bool inside = true;
        auto hp = geometry::Homography::identity(cam.view);
        for (const auto& s : chain.steps) {
          hp = s.homography.after(hp);
          const Vec3 q = hp.apply(Vec3(x, y, 1));
          const double qx = q.x() / q.z(), qy = q.y() / q.z();
          const auto& v = hp.target();
          if (std::abs(q.z()) < 1e-12 || qx < 2 || qy < 2 || qx > v.width - 3 || qy > v.height - 3) inside = false;
        }
        if (!inside) continue;
        const double d = fm.at(0, y, x) - img.at(0, y, x);
        se += d * d;
        peak = std::max(peak, img.at(0, y, x));
        ++count;
      }
    }
    interior_total += count;
    if (count == 0) return {false, "case " + std::to_string(i) + " has no interior pixels"};
    const double mse = se / count;
    const double psnr = 10.0 * std::log10(peak * peak / std::max(mse, 1e-300));
    worst = std::min(worst, psnr);
  }
  return {worst >= kRoundTripPsnr,
          std::to_string(cases) + " random chains (1-4 steps), " + std::to_string(interior_total) +
              " interior pixels, worst PSNR " + fmt(worst, 4) + " dB (min " + fmt(kRoundTripPsnr) + " dB)"};
}

// 7. Metric oracles.

tusimple::Record rec(std::vector<std::vector<double>> lanes, std::vector<int> rows) {
  return {std::move(lanes), std::move(rows), "img.png"};
}

Outcome criterion_metrics() {
  constexpr double A = tusimple::kAbsent;
  std::vector<std::string> failed;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };

  eval::LaneOptions five;
  five.threshold = 5;
  const auto acc = eval::tusimple_accuracy({rec({{12, 40, 31}}, {1, 2, 3})}, {rec({{10, 20, 30}}, {1, 2, 3})}, five);
  check(std::abs(acc.accuracy - 2.0 / 3.0) <= kExactTol && std::abs(acc.accuracy - 0.6667) < 5e-5, "accuracy 2/3");

  const auto gt4 = rec({{10, 12, 14}, {50, 52, 54}, {90, 92, 94}, {130, 132, 134}}, {100, 110, 120});
  const auto fpfn = eval::tusimple_fp_fn({rec({{10, 12, 14}, {50, 52, 54}, {300, 300, 300}}, {100, 110, 120})}, {gt4});
  check(std::abs(fpfn.fp - 1.0 / 3.0) <= kExactTol && fpfn.fn == 0.5, "fp/fn (1/3, 1/2)");

  const auto iou = eval::miou(LabelMap(2, 2, std::vector<int>{1, 2, 2, 2}), LabelMap(2, 2, std::vector<int>{1, 1, 2, 2}),
                              {1, 2});
  check(std::abs(iou.miou - 7.0 / 12.0) <= kExactTol, "mIoU 7/12");

  // -2 in the ground truth: neither counted in the total nor matchable.
  const auto gt_gap = rec({{10, A, 30}}, {1, 2, 3});
  const auto gap = eval::tusimple_accuracy({rec({{12, 500, 100}}, {1, 2, 3})}, {gt_gap}, five);
  check(gap.per_image[0].total == 2 && gap.accuracy == 0.5, "-2 ground truth excluded");
  const auto absent_pred = eval::tusimple_accuracy({rec({{A, 20, 30}}, {1, 2, 3})}, {gt_gap}, five);
  check(absent_pred.per_image[0].correct == 1, "-2 prediction never correct");
  const auto empty = eval::tusimple_accuracy({rec({{1, 2, 3}}, {1, 2, 3})}, {rec({{A, A, A}}, {1, 2, 3})}, five);
  check(empty.images == 0, "all-absent image skipped");

  // Under-horizon: rows above the line drop out of points and masks.
  const auto gt_rows = rec({{10, 20, 30, 40}}, {10, 20, 30, 40});
  const auto uh = eval::under_horizon(gt_rows, 25.0);
  check(uh.lanes[0] == std::vector<double>{A, A, 30, 40}, "under-horizon points");
  check(eval::under_horizon(gt_rows, 0.0) == gt_rows, "under-horizon at top keeps all");
  const auto pred_rows = rec({{10, 99, 30, 99}}, {10, 20, 30, 40});
  const auto full = eval::tusimple_accuracy({pred_rows}, {gt_rows}, five);
  const auto below = eval::tusimple_accuracy({pred_rows}, {uh}, five);
  check(full.accuracy == 0.5 && below.accuracy == 0.5 && below.per_image[0].total == 2, "under-horizon accuracy");
  LabelMap mask(4, 2, std::vector<int>{1, 1, 0, 1, 1, 0, 0, 0});
  const auto mh = eval::under_horizon(mask, 2.0, -1);
  check(mh.values == std::vector<int>{-1, -1, -1, -1, 1, 0, 0, 0}, "under-horizon mask");

  std::string detail = "accuracy " + fmt(acc.accuracy, 6) + ", FP/FN (" + fmt(fpfn.fp, 6) + ", " +
                       fmt(fpfn.fn, 6) + "), mIoU " + fmt(iou.miou, 6) + ", -2 and under-horizon fixtures";
  if (!failed.empty()) {
    detail += "; failed:";
    for (const auto& f : failed) detail += " [" + f + "]";
  }
  return {failed.empty(), detail};
}

// 8 and 9. Desk-scale experiment.

struct RunResult {
  std::string name;
  train::TrainResult train;
  int warps = 0;
  pipeline::Evaluation px, m;
  double lane_iou = 0.0;
  std::vector<tusimple::Record> pred_lanes, gt_lanes;
};

struct Experiment {
  config::RunConfig cfg;
  scene::Dataset data;
  std::size_t n_train = 0;
  std::vector<const scene::SceneSample*> held_out;
};

Experiment make_experiment(const fs::path& out) {
  Experiment e;
  e.cfg = config::parse("");
  e.data = scene::generate_dataset(e.cfg.data.scene, e.cfg.data.count, e.cfg.seed, out / "data");
  e.n_train = e.data.samples.size() - e.cfg.data.holdout;
  for (std::size_t i = e.n_train; i < e.data.samples.size(); ++i) e.held_out.push_back(&e.data.samples[i]);
  return e;
}

RunResult run_one(const Experiment& ex, bool no_ptl, const fs::path& dir, model::PTSegModel* keep = nullptr) {
  RunResult r;
  r.name = no_ptl ? "no_ptl" : "ptl";
  auto m = model::build_model(pipeline::network_config(ex.cfg, ex.data.manifest, no_ptl), ex.cfg.seed);
  r.warps = m.warp_ops_per_forward();
  std::vector<train::Example> examples;
  for (std::size_t i = 0; i < ex.n_train; ++i) {
    const auto& s = ex.data.samples[i];
    examples.push_back({&s.image, &s.semantic, &s.instance});
  }
  train::TrainOptions opt;
  opt.steps = ex.cfg.train.steps;
  opt.batch_size = ex.cfg.train.batch_size;
  opt.adam = ex.cfg.train.adam;
  opt.seed = ex.cfg.seed;
  std::cout << "  training " << r.name << " (" << opt.steps << " steps, " << examples.size() << " scenes)"
            << std::endl;
  r.train = train::train(m, examples, opt);

  const auto pred = pipeline::predict_samples(m, ex.held_out, ex.cfg.eval.min_lane_pixels);
  std::vector<tusimple::Record> gts;
  std::vector<LabelMap> masks;
  for (const auto* s : ex.held_out) {
    gts.push_back(s->lanes);
    masks.push_back(s->semantic);
  }
  const auto& cam = ex.data.manifest.camera;
  r.px = pipeline::evaluate(pred.lanes, gts, &pred.semantic, &masks, cam, ex.cfg.eval, eval::BinUnit::Pixels);
  r.m = pipeline::evaluate(pred.lanes, gts, &pred.semantic, &masks, cam, ex.cfg.eval, eval::BinUnit::Meters);
  r.lane_iou = r.px.iou.iou.at(1);
  r.pred_lanes = pred.lanes;
  r.gt_lanes = gts;

  fs::create_directories(dir);
  train::write_loss_csv(dir / "loss.csv", r.train.log);
  const std::map<std::string, std::string> extra{{"train_seconds", pipeline::format_double(r.train.seconds)},
                                                 {"warp_ops_per_forward", std::to_string(r.warps)}};
  pipeline::write_report(dir / "px", r.px, extra);
  pipeline::write_report(dir / "m", r.m, extra);
  if (keep != nullptr) *keep = std::move(m);
  return r;
}

// Every metric value of a run, for bitwise comparison.
std::vector<double> fingerprint(const RunResult& r) {
  std::vector<double> v;
  for (const auto& e : r.train.log) v.insert(v.end(), {e.loss, e.cross_entropy, e.discriminative});
  for (const auto* ev : {&r.px, &r.m}) {
    v.insert(v.end(), {ev->accuracy.accuracy, ev->fp_fn.fp, ev->fp_fn.fn, ev->iou.miou});
    v.insert(v.end(), ev->iou.iou.begin(), ev->iou.iou.end());
    v.insert(v.end(), ev->accuracy_bins.metric.begin(), ev->accuracy_bins.metric.end());
    v.insert(v.end(), ev->iou_bins.metric.begin(), ev->iou_bins.metric.end());
  }
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Oracle ground-hit test for the zero-roll rig: the ray through (x, y) meets
// the ground ahead when it points below the horizon plane.
bool sees_ground(const scene::CameraRig& cam, double x, double y) {
  const auto& k = cam.view.intrinsics;
  const Vec3 ray((x - k.cx) / k.f, (y - k.cy) / k.f, 1.0);
  const Vec3 down(0.0, std::sin(cam.pitch), std::cos(cam.pitch));
  return ray.dot(down) > 0.0;
}

struct PartitionCheck {
  bool pass = true;
  std::vector<std::string> failures;
};

void check_partition(const Experiment& ex, const RunResult& r, PartitionCheck& pc) {
  const auto& cam = ex.data.manifest.camera;
  long points = 0, ground_points = 0, total = 0;
  for (const auto* s : ex.held_out) {
    for (const auto& lane : s->lanes.lanes) {
      for (std::size_t i = 0; i < lane.size(); ++i) {
        if (lane[i] < 0) continue;
        ++points;
        ground_points += sees_ground(cam, lane[i], s->lanes.h_samples[i]) ? 1 : 0;
      }
    }
  }
  for (const auto& im : r.px.accuracy.per_image) {
    total += im.total;
  }
  long ground_pixels = 0;
  for (int y = 0; y < cam.view.height; ++y) {
    for (int x = 0; x < cam.view.width; ++x) ground_pixels += sees_ground(cam, x, y) ? 1 : 0;
  }
  const long images = static_cast<long>(ex.held_out.size());
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) {
      pc.pass = false;
      pc.failures.push_back(r.name + ": " + what);
    }
  };
  expect(r.px.accuracy_bins.total_support() == points, "px accuracy support");
  expect(r.m.accuracy_bins.total_support() == ground_points, "m accuracy support");
  expect(r.px.iou_bins.total_support() == images * cam.view.width * cam.view.height, "px mIoU support");
  expect(r.m.iou_bins.total_support() == images * ground_pixels, "m mIoU support");
  // Bins split the image-level accuracy: one bin spanning every distance
  // gives back the unbinned value, and per-image totals cover every point.
  expect(total == points, "per-image totals");
  const auto spanning = eval::binned_accuracy(r.pred_lanes, r.gt_lanes, cam.view.height,
                                              eval::BinSpec{eval::BinUnit::Pixels, {0.0}},
                                              ex.cfg.eval.lanes);
  expect(spanning.support.at(0) == points &&
             std::abs(spanning.metric.at(0) - r.px.accuracy.accuracy) <= kExactTol,
         "single spanning bin vs unbinned accuracy");
  for (const auto* bins : {&r.px.accuracy_bins, &r.m.accuracy_bins, &r.px.iou_bins, &r.m.iou_bins}) {
    for (std::size_t i = 0; i < bins->metric.size(); ++i) {
      expect((bins->support[i] == 0) == std::isnan(bins->metric[i]), "NaN exactly for empty bins");
    }
  }
}

void write_curves(const fs::path& path, const RunResult& ptl, const RunResult& base, bool meters) {
  const auto& a = meters ? ptl.m : ptl.px;
  const auto& b = meters ? base.m : base.px;
  std::ofstream out(path);
  out << "bin_lo,bin_hi,ptl_accuracy,no_ptl_accuracy,accuracy_support,ptl_miou,no_ptl_miou,miou_support\n";
  out << std::setprecision(10);
  const auto& edges = a.accuracy_bins.spec.edges;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    out << edges[i] << "," << (i + 1 < edges.size() ? pipeline::format_double(edges[i + 1]) : "inf") << ","
        << a.accuracy_bins.metric[i] << "," << b.accuracy_bins.metric[i] << "," << a.accuracy_bins.support[i]
        << "," << a.iou_bins.metric[i] << "," << b.iou_bins.metric[i] << "," << a.iou_bins.support[i] << "\n";
  }
}

// Far bin = last bin with support; difference PTL minus baseline.
std::string far_bin(const eval::DistanceBins& a, const eval::DistanceBins& b, const std::string& unit) {
  for (std::size_t i = a.metric.size(); i-- > 0;) {
    if (a.support[i] == 0) continue;
    const double d = a.metric[i] - b.metric[i];
    const std::string hi = i + 1 < a.spec.edges.size() ? fmt(a.spec.edges[i + 1]) : "inf";
    return "[" + fmt(a.spec.edges[i]) + "," + hi + ") " + unit + ": " + (d > 0 ? "+" : "") + fmt(d);
  }
  return "none";
}

struct ClusterResult {
  int images = 0;
  int passing = 0;
  double pooled_overlap = 0.0;
};

// Embeddings of held-out images with at least three visible lines, clustered
// on the ground-truth lane mask; each cluster votes for its majority instance.
ClusterResult cluster_check(const model::PTSegModel& m, const Experiment& ex) {
  ClusterResult cr;
  long matched = 0, masked = 0;
  for (const auto* s : ex.held_out) {
    std::set<int> visible;
    for (int v : s->instance.values) {
      if (v > 0) visible.insert(v);
    }
    if (visible.size() < 3) continue;
    ad::Tape tape;
    const auto out = model::forward(tape, m, model::image_tensor(s->image));
    LabelMap mask(s->semantic.height, s->semantic.width);
    for (std::size_t i = 0; i < mask.values.size(); ++i) mask.values[i] = s->instance.values[i] > 0;
    const auto clusters = model::cluster_embeddings(out.embeddings, mask, m.config().delta_d);
    std::map<int, std::map<int, long>> votes;
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
      if (mask.values[i]) ++votes[clusters.values[i]][s->instance.values[i]];
    }
    long good = 0, all = 0;
    for (const auto& [c, counts] : votes) {
      long best = 0;
      for (const auto& [inst, n] : counts) {
        best = std::max(best, n);
        all += n;
      }
      good += best;
    }
    ++cr.images;
    const double frac = static_cast<double>(good) / static_cast<double>(all);
    if (static_cast<int>(votes.size()) >= kClusterMinCount && frac >= kClusterOverlap) ++cr.passing;
    matched += good;
    masked += all;
  }
  cr.pooled_overlap = masked > 0 ? static_cast<double>(matched) / static_cast<double>(masked) : 0.0;
  return cr;
}

struct ExperimentOutcome {
  Outcome c8, c9;
};

ExperimentOutcome criteria_experiment(const fs::path& out, bool want9) {
  ExperimentOutcome eo;
  const auto t0 = std::chrono::steady_clock::now();
  const Experiment ex = make_experiment(out);
  std::cout << "  " << ex.data.samples.size() << " scenes rendered in " << fmt(seconds_since(t0)) << " s"
            << std::endl;

  model::PTSegModel ptl_model = model::build_model(tiny_network(), 0);
  const auto ptl = run_one(ex, false, out / "ptl", &ptl_model);
  const auto base = run_one(ex, true, out / "no_ptl");
  write_curves(out / "curves_px.csv", ptl, base, false);
  write_curves(out / "curves_m.csv", ptl, base, true);

  PartitionCheck pc;
  check_partition(ex, ptl, pc);
  check_partition(ex, base, pc);
  const auto clusters = cluster_check(ptl_model, ex);
  const bool cluster_ok = clusters.images > 0 && 2 * clusters.passing > clusters.images &&
                          clusters.pooled_overlap >= kClusterOverlap;

  const std::string far = "acc " + far_bin(ptl.px.accuracy_bins, base.px.accuracy_bins, "px") + ", " +
                          far_bin(ptl.m.accuracy_bins, base.m.accuracy_bins, "m") + "; mIoU " +
                          far_bin(ptl.px.iou_bins, base.px.iou_bins, "px") + ", " +
                          far_bin(ptl.m.iou_bins, base.m.iou_bins, "m");
  std::map<std::string, std::string> summary{
      {"ptl_lane_iou", pipeline::format_double(ptl.lane_iou)},
      {"no_ptl_lane_iou", pipeline::format_double(base.lane_iou)},
      {"ptl_accuracy", pipeline::format_double(ptl.px.accuracy.accuracy)},
      {"no_ptl_accuracy", pipeline::format_double(base.px.accuracy.accuracy)},
      {"ptl_train_seconds", pipeline::format_double(ptl.train.seconds)},
      {"no_ptl_train_seconds", pipeline::format_double(base.train.seconds)},
      {"ptl_warps_per_forward", std::to_string(ptl.warps)},
      {"no_ptl_warps_per_forward", std::to_string(base.warps)},
      {"far_bin_difference_ptl_minus_no_ptl", far},
      {"cluster_images", std::to_string(clusters.images)},
      {"cluster_images_passing", std::to_string(clusters.passing)},
      {"cluster_pooled_overlap", pipeline::format_double(clusters.pooled_overlap)},
  };
  eval::write_summary(out / "summary.txt", summary);

  const bool budget = ptl.train.seconds <= kTrainBudgetSeconds && base.train.seconds <= kTrainBudgetSeconds;
  const bool iou = ptl.lane_iou >= kMinLaneIou && base.lane_iou >= kMinLaneIou;
  const bool structure = ptl.warps == 6 && base.warps == 0;
  std::ostringstream d;
  d << "lane IoU PTL " << fmt(ptl.lane_iou) << " / no-PTL " << fmt(base.lane_iou) << " (min " << kMinLaneIou
    << "); acc " << fmt(ptl.px.accuracy.accuracy) << " / " << fmt(base.px.accuracy.accuracy) << "; train "
    << fmt(ptl.train.seconds, 4) << " s / " << fmt(base.train.seconds, 4) << " s (limit " << kTrainBudgetSeconds
    << " s); warps " << ptl.warps << " / " << base.warps << "; bin partitions "
    << (pc.pass ? "ok" : "BROKEN") << "; clusters: " << clusters.passing << "/" << clusters.images
    << " images with >=" << kClusterMinCount << " clusters at >=" << kClusterOverlap
    << " majority overlap, pooled " << fmt(clusters.pooled_overlap) << "; far bin (not asserted) " << far
    << "; curves in " << out.string();
  for (const auto& f : pc.failures) d << " [" << f << "]";
  eo.c8 = {budget && iou && structure && pc.pass && cluster_ok, d.str()};

  if (want9) {
    const auto ptl2 = run_one(ex, false, out / "repeat" / "ptl");
    const auto base2 = run_one(ex, true, out / "repeat" / "no_ptl");
    const bool same_ptl = bit_equal(fingerprint(ptl), fingerprint(ptl2));
    const bool same_base = bit_equal(fingerprint(base), fingerprint(base2));
    eo.c9 = {same_ptl && same_base,
             "repeat with seed " + std::to_string(ex.cfg.seed) + ": PTL loss log and metrics " +
                 (same_ptl ? "bit-identical" : "DIFFER") + ", no-PTL " + (same_base ? "bit-identical" : "DIFFER") +
                 " (" + std::to_string(fingerprint(ptl).size() + fingerprint(base).size()) + " values compared)"};
  }
  return eo;
}

Outcome guarded(const std::function<Outcome()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path out = "acceptance_out";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--out DIR]\n";
      return 2;
    }
  }
  auto want = [&](int c) { return only.empty() || only.count(c) > 0; };

  const std::vector<std::pair<int, std::pair<std::string, std::function<Outcome()>>>> quick{
      {1, {"homography composition", criterion_composition}},
      {2, {"horizon to normal to axis-angle", criterion_horizon}},
      {3, {"viewport key-point bounds", criterion_viewport}},
      {4, {"pure-rotation equivalence", criterion_equivalence}},
      {5, {"differentiability", criterion_differentiability}},
      {6, {"warp round trip", criterion_round_trip}},
      {7, {"metric oracles", criterion_metrics}},
  };
  int failures = 0;
  auto report = [&](int id, const std::string& name, const Outcome& o) {
    std::cout << "criterion " << id << " [" << (o.pass ? "PASS" : "FAIL") << "] " << name << ": " << o.detail
              << std::endl;
    failures += o.pass ? 0 : 1;
  };
  for (const auto& [id, entry] : quick) {
    if (want(id)) report(id, entry.first, guarded(entry.second));
  }
  if (want(8) || want(9)) {
    fs::create_directories(out);
    ExperimentOutcome eo;
    try {
      eo = criteria_experiment(fs::absolute(out), want(9));
    } catch (const std::exception& e) {
      eo.c8 = eo.c9 = {false, std::string("exception: ") + e.what()};
    }
    if (want(8)) report(8, "desk-scale experiment", eo.c8);
    if (want(9)) report(9, "determinism", eo.c9);
  }
  std::cout << (failures == 0 ? "all selected criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
