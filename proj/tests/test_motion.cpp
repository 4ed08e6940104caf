#include <cmath>

#include "cineseg/imagewarp.hpp"
#include "cineseg/metrics.hpp"
#include "cineseg/motion.hpp"
#include "cineseg/ops.hpp"
#include "cineseg/rng.hpp"
#include "doctest.h"

using namespace cineseg;

namespace {

// smooth two-blob image with gradients everywhere that matter
Tensor blob_image(int h, int w, double shift_x, double shift_y) {
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double x1 = x - 24 - shift_x, y1 = y - 30 - shift_y;
      const double x2 = x - 42 - shift_x, y2 = y - 22 - shift_y;
      v[static_cast<std::size_t>(y) * w + x] =
          std::exp(-(x1 * x1 + y1 * y1) / 90.0) + 0.7 * std::exp(-(x2 * x2 + y2 * y2) / 60.0);
    }
  }
  return Tensor::from_vector({h, w}, v);
}

double mean_abs(const Tensor& t) {
  double s = 0;
  for (std::int64_t i = 0; i < t.numel(); ++i) s += std::fabs(t.at(i));
  return s / static_cast<double>(t.numel());
}

double region_mean_dx(const Tensor& flow, int x0, int x1, int y0, int y1) {
  const int w = flow.dim(2);
  double s = 0;
  int n = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      s += flow.at(static_cast<std::int64_t>(y) * w + x);
      ++n;
    }
  }
  return s / n;
}

}  // namespace

TEST_CASE("varreg on identical images stays at the identity") {
  Tensor img = blob_image(64, 64, 0, 0);
  VarRegResult r = estimate_varreg(img, img, {});
  CHECK(mean_abs(r.flow) <= 0.05);
}

TEST_CASE("varreg recovers a known translation") {
  Tensor fixed = blob_image(64, 64, 0, 0);
  Tensor moving = blob_image(64, 64, 3, 0);  // content translated by +3 in x
  // backward-warp convention: sampling moving at (x + dx) must land on the
  // fixed content, so dx should approach the +3 px shift
  VarRegResult r = estimate_varreg(fixed, moving, {});
  const double dx = region_mean_dx(r.flow, 18, 48, 18, 40);
  CHECK(dx >= 2.7);
  CHECK(dx <= 3.3);
  // tangential leakage stays small
  const int hw = 64 * 64;
  double dy = 0;
  int n = 0;
  for (int y = 18; y < 40; ++y) {
    for (int x = 18; x < 48; ++x) {
      dy += std::fabs(r.flow.at(hw + y * 64 + x));
      ++n;
    }
  }
  CHECK(dy / n <= 0.3);
}

TEST_CASE("varreg never ends worse than the identity") {
  Rng rng(3);
  std::vector<double> noise(64 * 64);
  for (auto& v : noise) v = rng.uniform(0, 1);
  Tensor fixed = Tensor::from_vector({64, 64}, noise);
  Tensor moving = blob_image(64, 64, 1, -2);  // unrelated images
  VarRegResult r = estimate_varreg(fixed, moving, {});
  const double identity_loss = mse(fixed, moving).item();
  CHECK(r.loss <= identity_loss + 1e-12);
}

TEST_CASE("a huge smoothness weight flattens the flow") {
  Tensor fixed = blob_image(64, 64, 0, 0);
  Tensor moving = blob_image(64, 64, 3, 0);
  VarRegConfig base;
  VarRegResult r_base = estimate_varreg(fixed, moving, base);
  VarRegConfig stiff = base;
  stiff.lambda_smooth = 1e6;
  VarRegResult r_stiff = estimate_varreg(fixed, moving, stiff);
  const double s_base = smoothness_loss({r_base.flow}).item();
  const double s_stiff = smoothness_loss({r_stiff.flow}).item();
  CHECK(s_stiff <= 1e-3 * s_base);
}

TEST_CASE("ilk identities") {
  Tensor img = blob_image(48, 48, 0, 0);
  Tensor flow = estimate_ilk(img, img, {});
  for (std::int64_t i = 0; i < flow.numel(); ++i) CHECK(flow.at(i) == 0.0);

  // textureless images have degenerate structure tensors everywhere
  Tensor flat_a = Tensor::full({32, 32}, 0.4);
  Tensor flat_b = Tensor::full({32, 32}, 0.4);
  Tensor zero = estimate_ilk(flat_a, flat_b, {});
  for (std::int64_t i = 0; i < zero.numel(); ++i) CHECK(zero.at(i) == 0.0);

  CHECK_THROWS_AS(estimate_ilk(img, img, IlkConfig{4, 3, 10}), ValueError);
  CHECK_THROWS_AS(estimate_ilk(img, img, IlkConfig{1, 3, 10}), ValueError);
}

TEST_CASE("ilk recovers a unit translation in textured regions") {
  Tensor fixed = blob_image(48, 48, 0, 0);
  Tensor moving = blob_image(48, 48, 1, 0);
  Tensor flow = estimate_ilk(fixed, moving, {});
  // sample where the blob gradient is strong
  double dx = 0;
  int n = 0;
  for (int y = 24; y < 36; ++y) {
    for (int x = 16; x < 26; ++x) {
      dx += flow.at(y * 48 + x);
      ++n;
    }
  }
  dx /= n;
  CHECK(dx >= 0.8);
  CHECK(dx <= 1.2);
}

TEST_CASE("f2f composition basics") {
  // static sequence: everything near zero
  Tensor frame = blob_image(32, 32, 0, 0);
  Tensor seq = concat({reshape(frame, {1, 32, 32}), reshape(frame, {1, 32, 32}),
                       reshape(frame, {1, 32, 32})},
                      0);
  auto pair = [](const Tensor& fixed, const Tensor& moving) {
    VarRegConfig cfg;
    cfg.iters = 60;
    return estimate_varreg(fixed, moving, cfg).flow;
  };
  auto flows = estimate_flows_f2f(seq, pair);
  CHECK(flows.size() == 2);
  for (const Tensor& f : flows) CHECK(mean_abs(f) <= 0.05);

  // with two frames there is nothing to compose
  Tensor moving = blob_image(32, 32, -2, 1);
  Tensor two = concat({reshape(frame, {1, 32, 32}), reshape(moving, {1, 32, 32})}, 0);
  auto composed = estimate_flows_f2f(two, pair);
  Tensor direct = pair(frame, moving);
  CHECK(composed.size() == 1);
  CHECK(composed[0].to_vector() == direct.to_vector());
}

TEST_CASE("untrained flow network starts at the identity transform") {
  MotionTrainConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 4;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  Rng rng(5);
  std::vector<double> v(3 * 32 * 32);
  for (auto& x : v) x = rng.uniform(0, 1);
  Tensor seq = Tensor::from_vector({3, 32, 32}, v);
  MotionTrainResult r = train_motion_model({seq}, cfg);

  auto flows = estimate_flows_unet(r.model, seq);
  CHECK(flows.size() == 2);  // output count is T-1
  auto again = estimate_flows_unet(r.model, seq);
  for (std::size_t i = 0; i < flows.size(); ++i) {
    CHECK(flows[i].to_vector() == again[i].to_vector());  // deterministic
  }
}

TEST_CASE("training on static sequences keeps flows near zero") {
  Rng rng(6);
  std::vector<Tensor> dataset;
  for (int c = 0; c < 3; ++c) {
    Tensor img = blob_image(32, 32, rng.uniform(-3, 3), rng.uniform(-3, 3));
    std::vector<Tensor> frames(4, reshape(img, {1, 32, 32}));
    dataset.push_back(concat(frames, 0));
  }
  MotionTrainConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 4;
  cfg.epochs = 40;
  cfg.batch_size = 4;
  cfg.seed = 9;
  MotionTrainResult r = train_motion_model(dataset, cfg);
  CHECK(r.loss_trace.size() == 40);
  auto flows = estimate_flows_unet(r.model, dataset[0]);
  for (const Tensor& f : flows) CHECK(mean_abs(f) <= 0.1);
}

TEST_CASE("train rejects single-frame sequences") {
  Tensor seq = Tensor::zeros({1, 32, 32});
  MotionTrainConfig cfg;
  CHECK_THROWS_AS(train_motion_model({seq}, cfg), ValueError);
}
