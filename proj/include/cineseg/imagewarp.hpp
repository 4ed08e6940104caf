#pragma once

#include <vector>

#include "cineseg/tensor.hpp"

namespace cineseg {

// Flow fields are [2,H,W] tensors (batched: [N,2,H,W]): channel 0 is the
// horizontal displacement dx, channel 1 the vertical displacement dy, both in
// pixels. Backward-warp convention: the value stored at reference pixel
// (x, y) points into the moving image, so warping the moving image by the
// flow brings it onto the reference grid. The zero field is the identity.

// Samples image bilinearly at (x + dx, y + dy) with border clamping.
// image: [H,W], flow: [2,H,W]. Differentiable w.r.t. both arguments.
Tensor warp_bilinear(const Tensor& image, const Tensor& flow);

// composed(p) = outer(p) + inner sampled at p + outer(p).
// If outer maps reference coords into frame t-1 and inner maps frame t-1
// coords into frame t, the result maps reference coords into frame t.
Tensor compose_flows(const Tensor& outer, const Tensor& inner);

// Sum over frames of the per-pixel mean squared error to the reference.
Tensor motion_loss(const Tensor& reference, const std::vector<Tensor>& warped_frames);

// Sum of absolute forward differences of every flow, both channels, both
// directions. Zero iff every flow is constant.
Tensor smoothness_loss(const std::vector<Tensor>& flows);

// Same penalty normalized by the number of difference terms, so the weight
// between it and a per-pixel MSE is resolution-independent. Training
// objectives use this form.
Tensor smoothness_loss_mean(const std::vector<Tensor>& flows);

// Centered window; odd margins leave the extra pixel on the bottom/right.
// Accepts [H,W] or [N,C,H,W].
Tensor center_crop(const Tensor& image, int out_h, int out_w);

// resize_bilinear lives in ops.hpp (align-corners mapping).

}  // namespace cineseg
