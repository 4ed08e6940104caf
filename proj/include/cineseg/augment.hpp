#pragma once

#include <vector>

#include "cineseg/rng.hpp"
#include "cineseg/tensor.hpp"

namespace cineseg {

// One training sample's raw material. flows and masks may be left undefined
// (empty vector / default tensors) when a mode does not use them.
struct CineSample {
  Tensor frames;              // [T,H,W]
  std::vector<Tensor> flows;  // [2,H,W] each
  Tensor myo_mask;            // [H,W], binary
  Tensor scar_mask;
};

struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  double angle = 0.0;       // radians about the image center
  double blur_sigma = 0.0;  // applied to frames only
};

// Flips with probability 1/2 each, rotation uniform in +-30 degrees, blur
// sigma uniform in [0,1].
AugmentDraw sample_augment_draw(Rng& rng);

// Applies one spatial transform to every frame, every flow and both masks.
// Flow vectors are transformed with the geometry: a flip negates the
// mirrored component, a rotation rotates (dx, dy) by the same angle. Masks
// are re-binarized at 0.5 after interpolation. An identity draw returns the
// sample bit-for-bit.
CineSample augment_sample(const CineSample& sample, const AugmentDraw& draw);

// Convenience: draw + apply.
CineSample augment_sample(const CineSample& sample, Rng& rng);

}  // namespace cineseg
