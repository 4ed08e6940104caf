#include "cineseg/motion.hpp"

#include <algorithm>
#include <cmath>

#include "cineseg/adam.hpp"
#include "cineseg/imagewarp.hpp"
#include "cineseg/ops.hpp"
#include "cineseg/rng.hpp"

namespace cineseg {

namespace {

void check_sequence(const Tensor& seq) {
  if (seq.rank() != 3) {
    throw ShapeError("motion: sequence must be [T,H,W], got " + shape_str(seq.shape()));
  }
  if (seq.dim(0) < 2) {
    throw ValueError("motion: sequence has a single frame; at least two are required");
  }
}

Tensor frame_of(const Tensor& seq, int t) {
  return reshape(slice(seq, 0, t, 1), {seq.dim(1), seq.dim(2)});
}

// image pyramid, finest first. Levels halve through the same align-corners
// resize used to upscale flows, so the grids of adjacent levels coincide at
// the corners and displacements transfer without a half-pixel shift.
std::vector<Tensor> build_pyramid(const Tensor& image, int levels) {
  std::vector<Tensor> pyr{image};
  for (int l = 1; l < levels; ++l) {
    const Tensor& prev = pyr.back();
    const int h = prev.dim(0), w = prev.dim(1);
    if (h < 8 || w < 8) break;
    pyr.push_back(resize_bilinear(prev, h / 2, w / 2));
  }
  return pyr;
}

// flow upscaling between pyramid levels: bilinear resize plus per-axis
// rescaling of the displacement magnitudes (align-corners spacing)
Tensor upscale_flow(const Tensor& flow, int out_h, int out_w) {
  const int h = flow.dim(1), w = flow.dim(2);
  Tensor up = resize_bilinear(reshape(flow, {1, 2, h, w}), out_h, out_w);
  Tensor fx = scalar_mul(slice(up, 1, 0, 1), double(out_w - 1) / double(w - 1));
  Tensor fy = scalar_mul(slice(up, 1, 1, 1), double(out_h - 1) / double(h - 1));
  return reshape(concat({fx, fy}, 1), {2, out_h, out_w});
}

}  // namespace

Tensor smoothness_penalty(const Tensor& flow) {
  if (flow.rank() != 4 || flow.dim(1) != 2) {
    throw ShapeError("smoothness: flow batch must be [N,2,H,W], got " + shape_str(flow.shape()));
  }
  const int n = flow.dim(0), h = flow.dim(2), w = flow.dim(3);
  Tensor fx = scalar_mul(slice(flow, 1, 0, 1), 2.0 / (w - 1));
  Tensor fy = scalar_mul(slice(flow, 1, 1, 1), 2.0 / (h - 1));
  Tensor norm = concat({fx, fy}, 1);
  Tensor dx = sub(slice(norm, 3, 1, w - 1), slice(norm, 3, 0, w - 1));
  Tensor dy = sub(slice(norm, 2, 1, h - 1), slice(norm, 2, 0, h - 1));
  const double terms = static_cast<double>(n) * 2.0 *
                       (static_cast<double>(h) * (w - 1) + static_cast<double>(h - 1) * w);
  return scalar_mul(add(sum(abs(dx)), sum(abs(dy))), 1.0 / terms);
}

void MotionTrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0 || lr <= 0 || lambda_smooth < 0 || depth < 1 ||
      base_channels < 1) {
    throw ValueError("motion train config: all values must be positive");
  }
}

MotionTrainResult train_motion_model(const std::vector<Tensor>& sequences,
                                     const MotionTrainConfig& cfg) {
  cfg.validate();
  if (sequences.empty()) throw ValueError("train_motion_model: empty dataset");
  for (const Tensor& s : sequences) check_sequence(s);
  const int h = sequences[0].dim(1), w = sequences[0].dim(2);

  UNetSpec spec;
  spec.in_channels = 2;
  spec.out_channels = 2;
  spec.depth = cfg.depth;
  spec.base_channels = cfg.base_channels;
  spec.head_init = HeadInit::zero;
  MotionTrainResult result;
  result.model.net = UNet::build(spec, derive_seed(cfg.seed, "motion-init"));

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Adam opt(result.model.net.parameters(), adam_cfg);
  Rng sampler(derive_seed(cfg.seed, "motion-sample"));

  result.loss_trace.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Tensor> pair_slabs, moving_slabs, ref_slabs;
    pair_slabs.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto si = sampler.uniform_index(sequences.size());
      const Tensor& seq = sequences[si];
      const int t = 1 + static_cast<int>(sampler.uniform_index(static_cast<std::uint64_t>(seq.dim(0) - 1)));
      Tensor ref = slice(seq, 0, 0, 1);
      Tensor mov = slice(seq, 0, t, 1);
      pair_slabs.push_back(reshape(concat({ref, mov}, 0), {1, 2, h, w}));
      moving_slabs.push_back(reshape(mov, {1, 1, h, w}));
      ref_slabs.push_back(reshape(ref, {1, 1, h, w}));
    }
    Tensor batch = concat(pair_slabs, 0);
    Tensor moving = concat(moving_slabs, 0);
    Tensor reference = concat(ref_slabs, 0);

    GradTape tape;
    Tensor flow = result.model.net.forward(batch);
    Tensor warped = grid_sample(moving, flow);
    Tensor loss = add(mse(reference, warped), scalar_mul(smoothness_penalty(flow), cfg.lambda_smooth));
    const double lv = loss.item();
    if (!std::isfinite(lv)) {
      throw NumericError("train_motion_model: non-finite loss at epoch " + std::to_string(epoch));
    }
    result.loss_trace.push_back(lv);
    tape.backward(loss);
    opt.step();
  }
  return result;
}

std::vector<Tensor> estimate_flows_unet(const MotionModel& model, const Tensor& seq) {
  check_sequence(seq);
  const int t_count = seq.dim(0), h = seq.dim(1), w = seq.dim(2);
  std::vector<Tensor> flows;
  flows.reserve(static_cast<std::size_t>(t_count - 1));
  Tensor ref = slice(seq, 0, 0, 1);
  for (int t = 1; t < t_count; ++t) {
    Tensor pair = reshape(concat({ref, slice(seq, 0, t, 1)}, 0), {1, 2, h, w});
    flows.push_back(reshape(model.net.forward(pair), {2, h, w}));
  }
  return flows;
}

VarRegResult estimate_varreg(const Tensor& fixed, const Tensor& moving, const VarRegConfig& cfg) {
  if (fixed.rank() != 2 || fixed.shape() != moving.shape()) {
    throw ShapeError("estimate_varreg: fixed " + shape_str(fixed.shape()) + " vs moving " +
                     shape_str(moving.shape()));
  }
  if (cfg.iters <= 0 || cfg.levels <= 0 || cfg.lr <= 0) {
    throw ValueError("estimate_varreg: iters, levels and lr must be positive");
  }
  const auto fixed_pyr = build_pyramid(fixed, cfg.levels);
  const auto moving_pyr = build_pyramid(moving, cfg.levels);
  const int levels = static_cast<int>(fixed_pyr.size());

  auto eval_loss = [&](const Tensor& fix4, const Tensor& mov4, const Tensor& flow4) {
    Tensor warped = grid_sample(mov4, flow4);
    return add(mse(fix4, warped), scalar_mul(smoothness_penalty(flow4), cfg.lambda_smooth));
  };

  Tensor flow;  // [2,h,w] at the current level
  for (int li = levels - 1; li >= 0; --li) {
    const Tensor& fix = fixed_pyr[static_cast<std::size_t>(li)];
    const Tensor& mov = moving_pyr[static_cast<std::size_t>(li)];
    const int h = fix.dim(0), w = fix.dim(1);
    Tensor fix4 = reshape(fix, {1, 1, h, w});
    Tensor mov4 = reshape(mov, {1, 1, h, w});

    Tensor init = flow.defined() ? upscale_flow(flow, h, w) : Tensor::zeros({2, h, w});
    Tensor param = init.clone().set_requires_grad(true).set_name("varreg.flow");

    Tensor best_flow = init.clone();
    double best_loss = eval_loss(fix4, mov4, reshape(init, {1, 2, h, w})).item();
    if (li == 0) {
      // the identity stays a candidate: never end worse than no motion
      const double zero_loss = eval_loss(fix4, mov4, Tensor::zeros({1, 2, h, w})).item();
      if (zero_loss < best_loss) {
        best_loss = zero_loss;
        best_flow = Tensor::zeros({2, h, w});
      }
    }

    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    Adam opt({param}, adam_cfg);
    for (int it = 0; it < cfg.iters; ++it) {
      GradTape tape;
      Tensor loss = eval_loss(fix4, mov4, reshape(param, {1, 2, h, w}));
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("estimate_varreg: non-finite loss at level " + std::to_string(li) +
                           " iteration " + std::to_string(it));
      }
      if (lv < best_loss) {
        best_loss = lv;
        best_flow = param.clone();
      }
      tape.backward(loss);
      opt.step();
    }
    {
      const double lv = eval_loss(fix4, mov4, reshape(param.clone(), {1, 2, h, w})).item();
      if (std::isfinite(lv) && lv < best_loss) {
        best_loss = lv;
        best_flow = param.clone();
      }
    }
    flow = best_flow;
    if (li == 0) return {flow, best_loss};
  }
  return {flow, 0.0};  // unreachable; levels >= 1
}

std::vector<Tensor> estimate_flows_f2f(const Tensor& seq, const PairEstimator& pair_estimator) {
  check_sequence(seq);
  const int t_count = seq.dim(0);
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(t_count - 1));
  for (int t = 1; t < t_count; ++t) {
    Tensor adjacent = pair_estimator(frame_of(seq, t - 1), frame_of(seq, t));
    out.push_back(t == 1 ? adjacent : compose_flows(out.back(), adjacent));
  }
  return out;
}

Tensor estimate_ilk(const Tensor& fixed, const Tensor& moving, const IlkConfig& cfg) {
  if (fixed.rank() != 2 || fixed.shape() != moving.shape()) {
    throw ShapeError("estimate_ilk: fixed " + shape_str(fixed.shape()) + " vs moving " +
                     shape_str(moving.shape()));
  }
  if (cfg.window < 3 || cfg.window % 2 == 0) {
    throw ValueError("estimate_ilk: window must be odd and >= 3");
  }
  const auto fixed_pyr = build_pyramid(fixed, cfg.levels);
  const auto moving_pyr = build_pyramid(moving, cfg.levels);
  const int levels = static_cast<int>(fixed_pyr.size());
  const int half = cfg.window / 2;

  Tensor flow;
  for (int li = levels - 1; li >= 0; --li) {
    const Tensor& fix = fixed_pyr[static_cast<std::size_t>(li)];
    const Tensor& mov = moving_pyr[static_cast<std::size_t>(li)];
    const int h = fix.dim(0), w = fix.dim(1);
    if (!flow.defined()) {
      flow = Tensor::zeros({2, h, w});
    } else {
      flow = upscale_flow(flow, h, w);
    }
    const auto fx = fix.to_vector();

    for (int it = 0; it < cfg.iters; ++it) {
      const Tensor warped_t = warp_bilinear(mov, flow);
      const auto wv = warped_t.to_vector();
      auto at = [&](const std::vector<double>& img, int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return img[static_cast<std::size_t>(y) * w + x];
      };
      std::vector<double> ix(wv.size()), iy(wv.size()), itd(wv.size());
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          ix[i] = 0.5 * (at(wv, y, x + 1) - at(wv, y, x - 1));
          iy[i] = 0.5 * (at(wv, y + 1, x) - at(wv, y - 1, x));
          itd[i] = wv[i] - fx[i];
        }
      }
      auto fv = flow.to_vector();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double gxx = 0, gxy = 0, gyy = 0, bx = 0, by = 0;
          for (int dy = -half; dy <= half; ++dy) {
            const int yy = std::clamp(y + dy, 0, h - 1);
            for (int dx = -half; dx <= half; ++dx) {
              const int xx = std::clamp(x + dx, 0, w - 1);
              const std::size_t i = static_cast<std::size_t>(yy) * w + xx;
              gxx += ix[i] * ix[i];
              gxy += ix[i] * iy[i];
              gyy += iy[i] * iy[i];
              bx += ix[i] * itd[i];
              by += iy[i] * itd[i];
            }
          }
          const double det = gxx * gyy - gxy * gxy;
          if (det < 1e-6) continue;  // degenerate window: zero increment
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          // per-iteration increments capped at one pixel for stability
          fv[i] += std::clamp((gxy * by - gyy * bx) / det, -1.0, 1.0);
          fv[static_cast<std::size_t>(h) * w + i] +=
              std::clamp((gxy * bx - gxx * by) / det, -1.0, 1.0);
        }
      }
      flow = Tensor::from_vector({2, h, w}, fv);
    }
  }
  return flow;
}

}  // namespace cineseg
