#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cineseg/augment.hpp"
#include "cineseg/tensor.hpp"
#include "cineseg/unet.hpp"

namespace cineseg {

// Input compositions for the segmentation ablation. Channel counts for T
// frames: ed_only 1, all_frames T, of_plus_ed 3, of_plus_all 3T-2.
enum class AblationMode { ed_only, all_frames, of_plus_ed, of_plus_all };

const char* ablation_mode_name(AblationMode m);
AblationMode ablation_mode_from_name(const std::string& name);
bool mode_uses_flows(AblationMode m);
int fusion_channels(AblationMode m, int t_frames);

// Channel-stacks the inputs for one case. Flow channels are rescaled by
// 1/max_disp so their magnitudes are comparable with intensities;
// of_plus_ed pairs the reference frame with the per-pixel temporal mean of
// |dx| and |dy|. Flows are required exactly for the modes that use them.
Tensor fuse_inputs(const Tensor& frames, const std::vector<Tensor>& flows, AblationMode mode,
                   double max_disp = 4.0);

// Dice + BCE, summed over the classes present (channel 0 scar, channel 1
// myocardium when dual-task). pred are probabilities in [0,1], gt binary;
// shapes [N,C,H,W]. Soft Dice uses eps = 1e-5; BCE clamps probabilities to
// [1e-7, 1-1e-7]. Per-sample losses are averaged over the batch.
Tensor seg_loss(const Tensor& pred, const Tensor& gt);

struct SegTrainConfig {
  int epochs = 400;  // one optimizer step per epoch on a sampled batch
  int batch_size = 8;
  double lr = 5e-4;
  bool dual_task = true;
  double max_disp = 4.0;
  bool augment = true;
  std::uint64_t seed = 0;
  int depth = 3;
  int base_channels = 16;

  void validate() const;
};

struct SegModel {
  UNet net;
  AblationMode mode = AblationMode::ed_only;
  bool dual_task = true;
  double max_disp = 4.0;
  int t_frames = 0;  // frame count the fusion was built for
};

struct SegTrainResult {
  SegModel model;
  std::vector<double> loss_trace;
};

// Supervision uses the reference-phase masks only. Augmentation (when on)
// applies one spatial draw per sample to frames, flows and masks together.
SegTrainResult train_seg_model(const std::vector<CineSample>& dataset, AblationMode mode,
                               const SegTrainConfig& cfg);

struct SegPrediction {
  Tensor scar_prob;  // [H,W] in [0,1]
  Tensor myo_prob;   // undefined when single-task
  Tensor scar_mask;  // thresholded at 0.5
  Tensor myo_mask;
};

SegPrediction predict_masks(const SegModel& model, const Tensor& fusion_input);

// mask = probs > threshold (strict), as 0/1 values.
Tensor threshold_mask(const Tensor& probs, double threshold = 0.5);

}  // namespace cineseg
