#pragma once

#include <cstdint>
#include <vector>

#include "cineseg/tensor.hpp"

namespace cineseg {

// Synthetic cine phantom: a contracting annulus (the "myocardium") around a
// bright pool, with one angular sector that contracts less (the "scar",
// hypokinetic) and optionally differs faintly in texture. Frame 0 is the
// relaxed reference phase.
struct PhantomConfig {
  int height = 64;
  int width = 64;
  int frames = 8;  // T, one contraction cycle

  double center_x = 32.0;
  double center_y = 32.0;
  double r_inner = 12.0;  // annulus radii at the reference phase, pixels
  double r_outer = 22.0;

  // peak contraction fraction of the radius, per region
  double amp_normal = 0.25;
  double amp_scar = 0.05;

  // scar sector [theta0, theta1) in radians, measured from the +x axis
  double scar_theta0 = 0.5235987755982988;  // pi/6
  double scar_theta1 = 2.0943951023931953;  // pi/6 + pi/2

  double intensity_background = 0.15;
  double intensity_blood = 0.70;
  double intensity_myo = 0.45;

  // 0 = scar indistinguishable in texture (motion-only signal), 1 = full
  // contrast against the distinct scar level
  double texture_cue = 0.15;

  double noise_sigma = 0.01;
  std::uint64_t seed = 0;

  void validate() const;  // throws ValueError naming the violated bound
};

struct PhantomCase {
  Tensor frames;                 // [T,H,W]; frame 0 is the reference
  std::vector<Tensor> gt_flows;  // T-1 fields [2,H,W]; entry t-1 maps
                                 // reference coords into frame t (backward warp)
  Tensor myo_mask;               // [H,W] binary, reference phase
  Tensor scar_mask;              // subset of myo_mask
};

// Deterministic in the config. The ground-truth flow for frame t at
// reference pixel p with polar coordinates (r, theta) about the center is
//   delta_t(p) = -r * A(theta) * s(t) * w(r) * (cos theta, sin theta)
// with s(t) = sin^2(pi t / T), A blended between amp_scar and amp_normal
// over a 0.1 rad band at the sector edges, and a Gaussian radial window
// w(r) = exp(-(r - r_mid)^2 / (2 sigma_r^2)), r_mid = (r_in + r_out)/2,
// sigma_r = r_out - r_in.
//
// Frames are rendered by warping the clean reference image with the
// numerically inverted field, which makes the stored backward flow the
// exact minimizer of the registration objective: warping frame t by
// gt_flows[t-1] reconstructs frame 0 up to noise and interpolation error.
PhantomCase generate_phantom(const PhantomConfig& cfg);

// Inverts a backward-warp field by fixed-point iteration:
// inv(q) = -flow(q + inv(q)). Exposed for tests.
Tensor invert_flow(const Tensor& flow, int iterations = 30);

}  // namespace cineseg
