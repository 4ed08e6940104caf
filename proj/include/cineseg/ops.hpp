#pragma once

#include <vector>

#include "cineseg/tensor.hpp"

namespace cineseg {

// Differentiable primitives. All ops run at the tensors' precision, record
// onto the active GradTape when any input requires gradients, and are
// deterministic: every output element is produced by a fixed sequential
// reduction, so results are bit-identical regardless of thread count.
//
// Elementwise binary ops require equal shapes or a scalar (numel == 1) on
// one side; no other broadcasting.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scalar_mul(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);          // errors on any non-positive element
Tensor log_guarded(const Tensor& x);  // clamps input at 1e-12
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);   // -> shape [1]
Tensor mean(const Tensor& x);  // -> shape [1]

Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);

// x: [N,IC,H,W], w: [OC,IC,KH,KW], bias: [OC] or undefined. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride = 1, int pad = 0);

Tensor maxpool2(const Tensor& x);           // 2x2 stride 2; H, W must be even
Tensor avgpool2(const Tensor& x);           // 2x2 stride 2; odd trailing row/col dropped
Tensor upsample_nearest2(const Tensor& x);  // [N,C,H,W] -> [N,C,2H,2W]

// Backward-warp sampling: out[n,c,y,x] = in[n,c] sampled bilinearly at
// (x + flow_x, y + flow_y), coordinates clamped to the image border.
// Differentiable w.r.t. both the image and the flow.
Tensor grid_sample(const Tensor& x, const Tensor& flow);

// Align-corners bilinear resize; accepts [H,W] or [N,C,H,W].
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scalar_mul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scalar_mul(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Mean squared error over all elements (a composite, not a primitive).
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace cineseg
