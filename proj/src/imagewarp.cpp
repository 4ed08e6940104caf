#include "cineseg/imagewarp.hpp"

#include "cineseg/ops.hpp"

namespace cineseg {

namespace {

void check_flow(const char* op, const Tensor& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2) {
    throw ShapeError(std::string(op) + ": flow must be [2,H,W], got " + shape_str(flow.shape()));
  }
}

}  // namespace

Tensor warp_bilinear(const Tensor& image, const Tensor& flow) {
  if (image.rank() != 2) {
    throw ShapeError("warp_bilinear: image must be [H,W], got " + shape_str(image.shape()));
  }
  check_flow("warp_bilinear", flow);
  if (image.dim(0) != flow.dim(1) || image.dim(1) != flow.dim(2)) {
    throw ShapeError("warp_bilinear: image " + shape_str(image.shape()) + " vs flow " +
                     shape_str(flow.shape()));
  }
  const int h = image.dim(0), w = image.dim(1);
  Tensor img4 = reshape(image, {1, 1, h, w});
  Tensor flow4 = reshape(flow, {1, 2, h, w});
  return reshape(grid_sample(img4, flow4), {h, w});
}

Tensor compose_flows(const Tensor& outer, const Tensor& inner) {
  check_flow("compose_flows", outer);
  check_flow("compose_flows", inner);
  if (outer.shape() != inner.shape()) {
    throw ShapeError("compose_flows: " + shape_str(outer.shape()) + " vs " +
                     shape_str(inner.shape()));
  }
  const int h = outer.dim(1), w = outer.dim(2);
  Tensor inner4 = reshape(inner, {1, 2, h, w});
  Tensor outer4 = reshape(outer, {1, 2, h, w});
  Tensor sampled = grid_sample(inner4, outer4);  // inner evaluated at p + outer(p)
  return reshape(add(outer4, sampled), {2, h, w});
}

Tensor motion_loss(const Tensor& reference, const std::vector<Tensor>& warped_frames) {
  if (warped_frames.empty()) throw ValueError("motion_loss: empty frame list");
  Tensor total;
  for (const Tensor& f : warped_frames) {
    if (f.shape() != reference.shape()) {
      throw ShapeError("motion_loss: frame " + shape_str(f.shape()) + " vs reference " +
                       shape_str(reference.shape()));
    }
    Tensor term = mse(reference, f);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

namespace {

Tensor smoothness_terms(const Tensor& flow) {
  // forward differences along x (axis 2) and y (axis 1) of a [2,H,W] field
  const int h = flow.dim(1), w = flow.dim(2);
  Tensor dx = sub(slice(flow, 2, 1, w - 1), slice(flow, 2, 0, w - 1));
  Tensor dy = sub(slice(flow, 1, 1, h - 1), slice(flow, 1, 0, h - 1));
  return add(sum(abs(dx)), sum(abs(dy)));
}

std::int64_t smoothness_term_count(const Tensor& flow) {
  const std::int64_t h = flow.dim(1), w = flow.dim(2);
  return 2 * (h * (w - 1) + (h - 1) * w);
}

}  // namespace

Tensor smoothness_loss(const std::vector<Tensor>& flows) {
  if (flows.empty()) throw ValueError("smoothness_loss: empty flow list");
  Tensor total;
  for (const Tensor& f : flows) {
    check_flow("smoothness_loss", f);
    Tensor term = smoothness_terms(f);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor smoothness_loss_mean(const std::vector<Tensor>& flows) {
  if (flows.empty()) throw ValueError("smoothness_loss: empty flow list");
  std::int64_t count = 0;
  for (const Tensor& f : flows) {
    check_flow("smoothness_loss", f);
    count += smoothness_term_count(f);
  }
  return scalar_mul(smoothness_loss(flows), 1.0 / static_cast<double>(count));
}

Tensor center_crop(const Tensor& image, int out_h, int out_w) {
  const bool flat = image.rank() == 2;
  if (!flat && image.rank() != 4) {
    throw ShapeError("center_crop: input must be [H,W] or [N,C,H,W], got " +
                     shape_str(image.shape()));
  }
  const int ha = flat ? 0 : 2;
  const int h = image.dim(ha), w = image.dim(ha + 1);
  if (out_h > h || out_w > w || out_h <= 0 || out_w <= 0) {
    throw ShapeError("center_crop: window " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " does not fit in " + std::to_string(h) + "x" + std::to_string(w));
  }
  const int top = (h - out_h) / 2;
  const int left = (w - out_w) / 2;
  return slice(slice(image, ha, top, out_h), ha + 1, left, out_w);
}

}  // namespace cineseg
