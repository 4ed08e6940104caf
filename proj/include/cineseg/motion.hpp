#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cineseg/tensor.hpp"
#include "cineseg/unet.hpp"

namespace cineseg {

// ------------------------------------------------------------------------
// Motion extraction. All estimators share the convention of imagewarp.hpp:
// the returned field for frame t lives on the reference (frame 0) grid and
// warping frame t by it reconstructs frame 0.
// ------------------------------------------------------------------------

struct MotionTrainConfig {
  int epochs = 1000;  // one optimizer step per epoch on a freshly sampled batch
  int batch_size = 16;
  double lr = 5e-4;
  double lambda_smooth = 0.1;  // weight of the per-term-normalized smoothness penalty
  std::uint64_t seed = 0;
  int depth = 3;
  int base_channels = 16;

  void validate() const;
};

// U-Net taking the stacked pair (reference, moving) and emitting (dx, dy).
// The head starts at zero so training begins from the identity transform.
struct MotionModel {
  UNet net;
};

struct MotionTrainResult {
  MotionModel model;
  std::vector<double> loss_trace;  // one entry per epoch
};

// Amortized training over randomly sampled (sequence, t) pairs, t >= 1,
// minimizing MSE(I0, warp(It, F(I0, It))) plus the smoothness penalty.
MotionTrainResult train_motion_model(const std::vector<Tensor>& sequences,
                                     const MotionTrainConfig& cfg);

// One forward pass per frame t >= 1 paired with frame 0; returns T-1 fields.
std::vector<Tensor> estimate_flows_unet(const MotionModel& model, const Tensor& seq);

// Direct per-pair optimization of the same objective (no network), with a
// coarse-to-fine pyramid. The best iterate is retained, and the zero flow is
// always a candidate, so the result never scores worse than the identity.
struct VarRegConfig {
  double lambda_smooth = 0.1;
  int iters = 150;  // per pyramid level
  double lr = 0.25;
  int levels = 3;
};

struct VarRegResult {
  Tensor flow;
  double loss;
};

VarRegResult estimate_varreg(const Tensor& fixed, const Tensor& moving,
                             const VarRegConfig& cfg = {});

// Frame-to-frame estimation: adjacent flows accumulated onto the reference
// frame by composition. pair_estimator(fixed, moving) returns a [2,H,W] flow.
using PairEstimator = std::function<Tensor(const Tensor&, const Tensor&)>;
std::vector<Tensor> estimate_flows_f2f(const Tensor& seq, const PairEstimator& pair_estimator);

// Pyramidal iterative Lucas-Kanade. Pixels whose windowed structure tensor
// is degenerate (determinant < 1e-6) receive a zero increment.
struct IlkConfig {
  int window = 9;  // odd, >= 3
  int levels = 3;
  int iters = 10;  // per level
};

Tensor estimate_ilk(const Tensor& fixed, const Tensor& moving, const IlkConfig& cfg = {});

// Smoothness penalty used by the training objectives: absolute forward
// differences of the flow expressed in normalized grid units (2*dx/(W-1),
// 2*dy/(H-1)), averaged over difference terms. The normalization keeps the
// default weight meaningful across resolutions and balanced against a
// per-pixel MSE on [0,1] intensities. flow: [N,2,H,W].
Tensor smoothness_penalty(const Tensor& flow);

}  // namespace cineseg
