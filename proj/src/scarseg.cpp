#include "cineseg/scarseg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cineseg/adam.hpp"
#include "cineseg/ops.hpp"
#include "cineseg/rng.hpp"

namespace cineseg {

namespace {

constexpr double kDiceEps = 1e-5;
constexpr double kProbClamp = 1e-7;

void check_binary_tensor(const char* op, const Tensor& m) {
  for (std::int64_t i = 0; i < m.numel(); ++i) {
    const double v = m.at(i);
    if (v != 0.0 && v != 1.0) {
      throw ValueError(std::string(op) + ": ground truth is not binary (value " +
                       std::to_string(v) + ")");
    }
  }
}

}  // namespace

const char* ablation_mode_name(AblationMode m) {
  switch (m) {
    case AblationMode::ed_only: return "ED_ONLY";
    case AblationMode::all_frames: return "ALL_FRAMES";
    case AblationMode::of_plus_ed: return "OF_PLUS_ED";
    case AblationMode::of_plus_all: return "OF_PLUS_ALL";
  }
  return "?";
}

AblationMode ablation_mode_from_name(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
  if (lower == "ed_only") return AblationMode::ed_only;
  if (lower == "all_frames") return AblationMode::all_frames;
  if (lower == "of_plus_ed") return AblationMode::of_plus_ed;
  if (lower == "of_plus_all") return AblationMode::of_plus_all;
  throw ValueError("unknown ablation mode '" + name +
                   "' (expected ed_only|all_frames|of_plus_ed|of_plus_all)");
}

bool mode_uses_flows(AblationMode m) {
  return m == AblationMode::of_plus_ed || m == AblationMode::of_plus_all;
}

int fusion_channels(AblationMode m, int t_frames) {
  switch (m) {
    case AblationMode::ed_only: return 1;
    case AblationMode::all_frames: return t_frames;
    case AblationMode::of_plus_ed: return 3;
    case AblationMode::of_plus_all: return 3 * t_frames - 2;
  }
  return 0;
}

Tensor fuse_inputs(const Tensor& frames, const std::vector<Tensor>& flows, AblationMode mode,
                   double max_disp) {
  if (frames.rank() != 3) {
    throw ShapeError("fuse_inputs: frames must be [T,H,W], got " + shape_str(frames.shape()));
  }
  if (max_disp <= 0) throw ValueError("fuse_inputs: max_disp must be positive");
  const int t_count = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
  if (mode_uses_flows(mode)) {
    if (static_cast<int>(flows.size()) != t_count - 1) {
      throw ValueError("fuse_inputs: mode " + std::string(ablation_mode_name(mode)) + " needs " +
                       std::to_string(t_count - 1) + " flows, got " + std::to_string(flows.size()));
    }
    for (const Tensor& f : flows) {
      if (f.shape() != std::vector<int>{2, h, w}) {
        throw ShapeError("fuse_inputs: flow " + shape_str(f.shape()) + " does not match frames");
      }
    }
  } else if (!flows.empty()) {
    throw ValueError("fuse_inputs: mode " + std::string(ablation_mode_name(mode)) +
                     " takes no flows");
  }

  const double inv_disp = 1.0 / max_disp;
  switch (mode) {
    case AblationMode::ed_only:
      return slice(frames, 0, 0, 1);
    case AblationMode::all_frames:
      return frames;
    case AblationMode::of_plus_ed: {
      // reference frame + temporal mean of |dx|, |dy|
      Tensor ax, ay;
      for (const Tensor& f : flows) {
        Tensor fx = abs(slice(f, 0, 0, 1));
        Tensor fy = abs(slice(f, 0, 1, 1));
        ax = ax.defined() ? add(ax, fx) : fx;
        ay = ay.defined() ? add(ay, fy) : fy;
      }
      const double scale = inv_disp / static_cast<double>(flows.size());
      return concat({slice(frames, 0, 0, 1), scalar_mul(ax, scale), scalar_mul(ay, scale)}, 0);
    }
    case AblationMode::of_plus_all: {
      std::vector<Tensor> parts{frames};
      for (const Tensor& f : flows) parts.push_back(scalar_mul(f, inv_disp));
      return concat(parts, 0);
    }
  }
  throw ValueError("fuse_inputs: bad mode");
}

Tensor seg_loss(const Tensor& pred, const Tensor& gt) {
  if (pred.rank() != 4 || gt.rank() != 4 || pred.shape() != gt.shape()) {
    throw ShapeError("seg_loss: pred " + shape_str(pred.shape()) + " vs gt " +
                     shape_str(gt.shape()));
  }
  check_binary_tensor("seg_loss", gt);
  const int n = pred.dim(0), c = pred.dim(1);

  Tensor total;
  for (int s = 0; s < n; ++s) {
    Tensor sample_loss;
    for (int cls = 0; cls < c; ++cls) {
      Tensor p = slice(slice(pred, 0, s, 1), 1, cls, 1);
      Tensor g = slice(slice(gt, 0, s, 1), 1, cls, 1);

      Tensor inter = sum(mul(p, g));
      Tensor denom = add(add(sum(p), sum(g)), Tensor::scalar(kDiceEps));
      Tensor dice = sub(Tensor::scalar(1.0),
                        div(add(scalar_mul(inter, 2.0), Tensor::scalar(kDiceEps)), denom));

      Tensor pc = clamp(p, kProbClamp, 1.0 - kProbClamp);
      Tensor one_minus_g = add_scalar(neg(g), 1.0);
      Tensor one_minus_p = add_scalar(neg(pc), 1.0);
      Tensor bce = neg(mean(add(mul(g, log(pc)), mul(one_minus_g, log(one_minus_p)))));

      Tensor term = add(dice, bce);
      sample_loss = sample_loss.defined() ? add(sample_loss, term) : term;
    }
    total = total.defined() ? add(total, sample_loss) : sample_loss;
  }
  return scalar_mul(total, 1.0 / static_cast<double>(n));
}

void SegTrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0 || lr <= 0 || max_disp <= 0 || depth < 1 || base_channels < 1) {
    throw ValueError("seg train config: all values must be positive");
  }
}

SegTrainResult train_seg_model(const std::vector<CineSample>& dataset, AblationMode mode,
                               const SegTrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw ValueError("train_seg_model: empty dataset");
  const int t_count = dataset[0].frames.dim(0);
  const int h = dataset[0].frames.dim(1), w = dataset[0].frames.dim(2);
  for (const CineSample& s : dataset) {
    if (s.frames.rank() != 3 || s.frames.dim(0) != t_count) {
      throw ShapeError("train_seg_model: inconsistent frame counts in dataset");
    }
    if (!s.scar_mask.defined() || !s.myo_mask.defined()) {
      throw ValueError("train_seg_model: dataset cases need reference-phase masks");
    }
    if (mode_uses_flows(mode) && static_cast<int>(s.flows.size()) != t_count - 1) {
      throw ValueError(std::string("train_seg_model: mode ") + ablation_mode_name(mode) +
                       " requires flows for every case");
    }
  }

  UNetSpec spec;
  spec.in_channels = fusion_channels(mode, t_count);
  spec.out_channels = cfg.dual_task ? 2 : 1;
  spec.depth = cfg.depth;
  spec.base_channels = cfg.base_channels;
  spec.final_activation = FinalActivation::sigmoid;

  SegTrainResult result;
  result.model.net = UNet::build(spec, derive_seed(cfg.seed, "seg-init"));
  result.model.mode = mode;
  result.model.dual_task = cfg.dual_task;
  result.model.max_disp = cfg.max_disp;
  result.model.t_frames = t_count;

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Adam opt(result.model.net.parameters(), adam_cfg);
  Rng sampler(derive_seed(cfg.seed, "seg-sample"));
  Rng augment_rng(derive_seed(cfg.seed, "seg-augment"));

  const int batch = std::min<int>(cfg.batch_size, static_cast<int>(dataset.size()));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  result.loss_trace.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // partial Fisher-Yates: the first `batch` entries become the batch
    for (int b = 0; b < batch; ++b) {
      const auto j = b + static_cast<std::size_t>(sampler.uniform_index(order.size() - b));
      std::swap(order[static_cast<std::size_t>(b)], order[j]);
    }
    std::vector<Tensor> inputs, targets;
    inputs.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      const CineSample& raw = dataset[order[static_cast<std::size_t>(b)]];
      CineSample s = cfg.augment ? augment_sample(raw, augment_rng) : raw;
      const std::vector<Tensor> flow_arg = mode_uses_flows(mode) ? s.flows : std::vector<Tensor>{};
      Tensor fused = fuse_inputs(s.frames, flow_arg, mode, cfg.max_disp);
      inputs.push_back(reshape(fused, {1, fused.dim(0), h, w}));
      Tensor gt = cfg.dual_task
                      ? concat({reshape(s.scar_mask, {1, 1, h, w}), reshape(s.myo_mask, {1, 1, h, w})}, 1)
                      : reshape(s.scar_mask, {1, 1, h, w});
      targets.push_back(gt);
    }
    Tensor batch_in = concat(inputs, 0);
    Tensor batch_gt = concat(targets, 0);

    GradTape tape;
    Tensor pred = result.model.net.forward(batch_in);
    Tensor loss = seg_loss(pred, batch_gt);
    const double lv = loss.item();
    if (!std::isfinite(lv)) {
      throw NumericError("train_seg_model: non-finite loss at epoch " + std::to_string(epoch));
    }
    result.loss_trace.push_back(lv);
    tape.backward(loss);
    opt.step();
  }
  return result;
}

SegPrediction predict_masks(const SegModel& model, const Tensor& fusion_input) {
  if (fusion_input.rank() != 3) {
    throw ShapeError("predict: fusion input must be [C,H,W], got " +
                     shape_str(fusion_input.shape()));
  }
  const int c = fusion_input.dim(0), h = fusion_input.dim(1), w = fusion_input.dim(2);
  if (c != model.net.spec().in_channels) {
    throw ShapeError("predict: input has " + std::to_string(c) + " channels but the model expects " +
                     std::to_string(model.net.spec().in_channels));
  }
  Tensor out = model.net.forward(reshape(fusion_input, {1, c, h, w}));
  SegPrediction p;
  p.scar_prob = reshape(slice(out, 1, 0, 1), {h, w});
  p.scar_mask = threshold_mask(p.scar_prob);
  if (model.dual_task) {
    p.myo_prob = reshape(slice(out, 1, 1, 1), {h, w});
    p.myo_mask = threshold_mask(p.myo_prob);
  }
  return p;
}

Tensor threshold_mask(const Tensor& probs, double threshold) {
  std::vector<double> v = probs.to_vector();
  for (auto& x : v) x = x > threshold ? 1.0 : 0.0;
  return Tensor::from_vector(probs.shape(), v);
}

}  // namespace cineseg
