#include <cmath>

#include "cineseg/imagewarp.hpp"
#include "cineseg/metrics.hpp"
#include "cineseg/ops.hpp"
#include "cineseg/phantom.hpp"
#include "doctest.h"

using namespace cineseg;

namespace {

Tensor frame_of(const PhantomCase& pc, int t) {
  const int h = pc.frames.dim(1), w = pc.frames.dim(2);
  return reshape(slice(pc.frames, 0, t, 1), {h, w});
}

}  // namespace

TEST_CASE("config validation names the violated bound") {
  PhantomConfig cfg;
  cfg.r_inner = 30;
  cfg.r_outer = 22;
  try {
    generate_phantom(cfg);
    FAIL("expected ValueError");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("r_inner") != std::string::npos);
  }
  PhantomConfig cfg2;
  cfg2.frames = 1;
  CHECK_THROWS_AS(generate_phantom(cfg2), ValueError);
  PhantomConfig cfg3;
  cfg3.amp_scar = 0.5;  // exceeds amp_normal
  CHECK_THROWS_AS(generate_phantom(cfg3), ValueError);
}

TEST_CASE("zero contraction freezes the sequence") {
  PhantomConfig cfg;
  cfg.amp_normal = 0.0;
  cfg.amp_scar = 0.0;
  cfg.noise_sigma = 0.0;
  PhantomCase pc = generate_phantom(cfg);
  const auto f0 = frame_of(pc, 0).to_vector();
  for (int t = 1; t < cfg.frames; ++t) {
    CHECK(frame_of(pc, t).to_vector() == f0);
  }
  for (const Tensor& f : pc.gt_flows) {
    for (std::int64_t i = 0; i < f.numel(); ++i) CHECK(f.at(i) == 0.0);
  }
}

TEST_CASE("zero-width sector removes the scar") {
  PhantomConfig cfg;
  cfg.scar_theta1 = cfg.scar_theta0;
  cfg.noise_sigma = 0.0;
  PhantomCase pc = generate_phantom(cfg);
  for (std::int64_t i = 0; i < pc.scar_mask.numel(); ++i) CHECK(pc.scar_mask.at(i) == 0.0);

  // the flow matches a uniform-contraction phantom everywhere
  PhantomConfig uni = cfg;
  uni.amp_scar = uni.amp_normal;
  uni.scar_theta1 = uni.scar_theta0 + 1.0;
  PhantomCase pu = generate_phantom(uni);
  for (std::size_t t = 0; t < pc.gt_flows.size(); ++t) {
    const auto a = pc.gt_flows[t].to_vector();
    const auto b = pu.gt_flows[t].to_vector();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("determinism in the seed") {
  PhantomConfig cfg;
  cfg.seed = 1234;
  PhantomCase a = generate_phantom(cfg);
  PhantomCase b = generate_phantom(cfg);
  CHECK(a.frames.to_vector() == b.frames.to_vector());
  CHECK(a.myo_mask.to_vector() == b.myo_mask.to_vector());

  cfg.seed = 99;
  PhantomCase c = generate_phantom(cfg);
  CHECK(c.frames.to_vector() != a.frames.to_vector());           // different noise
  CHECK(c.myo_mask.to_vector() == a.myo_mask.to_vector());       // same masks
  CHECK(c.scar_mask.to_vector() == a.scar_mask.to_vector());
  for (std::size_t t = 0; t < a.gt_flows.size(); ++t) {
    CHECK(c.gt_flows[t].to_vector() == a.gt_flows[t].to_vector());  // same flows
  }
}

TEST_CASE("masks are nested and noise-independent") {
  PhantomConfig cfg;
  PhantomCase pc = generate_phantom(cfg);
  double myo_area = 0, scar_area = 0;
  for (std::int64_t i = 0; i < pc.myo_mask.numel(); ++i) {
    CHECK(pc.scar_mask.at(i) <= pc.myo_mask.at(i));  // scar inside myocardium
    myo_area += pc.myo_mask.at(i);
    scar_area += pc.scar_mask.at(i);
  }
  CHECK(myo_area > 0);
  CHECK(scar_area > 0);

  PhantomConfig noisy = cfg;
  noisy.noise_sigma = 0.2;
  PhantomCase pn = generate_phantom(noisy);
  CHECK(pn.myo_mask.to_vector() == pc.myo_mask.to_vector());
  CHECK(pn.scar_mask.to_vector() == pc.scar_mask.to_vector());
}

TEST_CASE("hypokinetic sector moves less") {
  PhantomConfig cfg;
  cfg.noise_sigma = 0.0;
  PhantomCase pc = generate_phantom(cfg);
  const int h = cfg.height, w = cfg.width;
  for (std::size_t t = 0; t < pc.gt_flows.size(); ++t) {
    const Tensor& f = pc.gt_flows[t];
    double scar_mag = 0, normal_mag = 0;
    int ns = 0, nn = 0;
    for (int i = 0; i < h * w; ++i) {
      if (pc.myo_mask.at(i) == 0.0) continue;
      const double m = std::hypot(f.at(i), f.at(h * w + i));
      if (pc.scar_mask.at(i) == 1.0) {
        scar_mag += m;
        ++ns;
      } else {
        normal_mag += m;
        ++nn;
      }
    }
    CHECK(scar_mag / ns < normal_mag / nn);
  }
}

TEST_CASE("ground-truth flow reconstructs the reference frame") {
  PhantomConfig cfg;
  PhantomCase pc = generate_phantom(cfg);
  Tensor f0 = frame_of(pc, 0);
  for (int t = 1; t < cfg.frames; ++t) {
    Tensor ft = frame_of(pc, t);
    const double unwarped = mse(f0, ft).item();
    const double warped = mse(f0, warp_bilinear(ft, pc.gt_flows[static_cast<std::size_t>(t - 1)])).item();
    // residual is the fresh per-frame noise plus interpolation error
    CHECK(warped < 6.0 * cfg.noise_sigma * cfg.noise_sigma);
    if (t > 1 && t < cfg.frames - 1) CHECK(warped < 0.5 * unwarped);
  }
}

TEST_CASE("flow inversion composes to identity") {
  PhantomConfig cfg;
  cfg.noise_sigma = 0.0;
  PhantomCase pc = generate_phantom(cfg);
  const Tensor& gt = pc.gt_flows[3];  // peak contraction
  Tensor inv = invert_flow(gt, 200);
  // inv(q) + gt(q + inv(q)) == 0 is the defining relation
  Tensor comp = compose_flows(inv, gt);
  double worst = 0;
  for (std::int64_t i = 0; i < comp.numel(); ++i) worst = std::max(worst, std::fabs(comp.at(i)));
  CHECK(worst < 1e-3);
}
