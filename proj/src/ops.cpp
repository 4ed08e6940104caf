#include "cineseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cineseg {

namespace {

// ---------------------------------------------------------------- helpers

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

Precision prec_of(const Tensor& a) { return a.precision(); }

void check_same_precision(const char* op, const Tensor& a, const Tensor& b) {
  if (a.precision() != b.precision()) {
    throw ValueError(std::string(op) + ": operands were created under different precision modes");
  }
}

// Records the backward rule when a tape is active and any input wants grads.
template <class... Ts>
void record_if(const Tensor& out, std::function<void()> fn, const Ts&... inputs) {
  GradTape* tape = GradTape::active();
  if (!tape) return;
  const bool any = (inputs.requires_grad() || ...);
  if (!any) return;
  out.unwrap().requires_grad = true;
  tape->record(out.node(), std::move(fn));
}

enum class Broadcast { none, b_scalar, a_scalar };

Broadcast binary_mode(const char* op, const Tensor& a, const Tensor& b) {
  check_same_precision(op, a, b);
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.numel() == 1) return Broadcast::b_scalar;
  if (a.numel() == 1) return Broadcast::a_scalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()) + " (only scalar broadcast is supported)");
}

template <class T>
void add_arrays(T* d, const T* s, std::int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 65536)
#endif
  for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
}

template <class T>
void relu_backward_arrays(T* gx, const T* x, const T* g, std::int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 65536)
#endif
  for (std::int64_t i = 0; i < n; ++i) {
    if (x[i] > 0) gx[i] += g[i];
  }
}

// out += g  (elementwise over whole buffers)
void accum(Buffer& dst, const Buffer& src) {
  CINESEG_DISPATCH(dst.prec, {
    add_arrays(dst.as<scalar_t>(), src.as<scalar_t>(), static_cast<std::int64_t>(dst.size()));
  });
}

double buffer_sum(const Buffer& b) {
  double acc = 0.0;
  const std::size_t n = b.size();
  for (std::size_t i = 0; i < n; ++i) acc += b.get(i);
  return acc;
}

// ------------------------------------------------------- elementwise core

// Generic unary op: forward f(x), backward df(x, y) giving dy/dx.
template <class F>
Tensor unary_op(const Tensor& x, F f) {
  Tensor out = make_tensor(x.shape());
  CINESEG_DISPATCH(prec_of(x), {
    const auto* xp = x.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) op[i] = static_cast<scalar_t>(f(double(xp[i])));
  });
  return out;
}

// Accumulates grad_x += g * dfdx(x_i, y_i) for a recorded unary op.
template <class DF>
std::function<void()> unary_back(const Tensor& x, const Tensor& out, DF dfdx) {
  return [x, out, dfdx]() {
    if (!x.requires_grad()) return;
    Node& xn = x.unwrap();
    Buffer& gx = ensure_grad(xn);
    const Buffer& g = *out.unwrap().grad;
    const std::int64_t n = xn.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      gx.set(i, gx.get(i) + g.get(i) * dfdx(xn.data.get(i), out.unwrap().data.get(i)));
    }
  };
}

}  // namespace

// ------------------------------------------------------------ binary ops

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_mode("add", a, b);
  const Tensor& big = (bc == Broadcast::a_scalar) ? b : a;
  Tensor out = make_tensor(big.shape());
  CINESEG_DISPATCH(prec_of(a), {
    const auto* ap = a.unwrap().data.as<scalar_t>();
    const auto* bp = b.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    const std::int64_t n = out.numel();
    if (bc == Broadcast::none) {
      for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
    } else if (bc == Broadcast::b_scalar) {
      const scalar_t s = bp[0];
      for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] + s;
    } else {
      const scalar_t s = ap[0];
      for (std::int64_t i = 0; i < n; ++i) op[i] = s + bp[i];
    }
  });
  record_if(
      out,
      [a, b, out, bc]() {
        const Buffer& g = *out.unwrap().grad;
        if (a.requires_grad()) {
          Buffer& ga = ensure_grad(a.unwrap());
          if (bc == Broadcast::a_scalar) {
            ga.set(0, ga.get(0) + buffer_sum(g));
          } else {
            accum(ga, g);
          }
        }
        if (b.requires_grad()) {
          Buffer& gb = ensure_grad(b.unwrap());
          if (bc == Broadcast::b_scalar) {
            gb.set(0, gb.get(0) + buffer_sum(g));
          } else {
            accum(gb, g);
          }
        }
      },
      a, b);
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_mode("sub", a, b);
  const Tensor& big = (bc == Broadcast::a_scalar) ? b : a;
  Tensor out = make_tensor(big.shape());
  CINESEG_DISPATCH(prec_of(a), {
    const auto* ap = a.unwrap().data.as<scalar_t>();
    const auto* bp = b.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    const std::int64_t n = out.numel();
    if (bc == Broadcast::none) {
      for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] - bp[i];
    } else if (bc == Broadcast::b_scalar) {
      const scalar_t s = bp[0];
      for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] - s;
    } else {
      const scalar_t s = ap[0];
      for (std::int64_t i = 0; i < n; ++i) op[i] = s - bp[i];
    }
  });
  record_if(
      out,
      [a, b, out, bc]() {
        const Buffer& g = *out.unwrap().grad;
        const std::int64_t n = out.numel();
        if (a.requires_grad()) {
          Buffer& ga = ensure_grad(a.unwrap());
          if (bc == Broadcast::a_scalar) {
            ga.set(0, ga.get(0) + buffer_sum(g));
          } else {
            accum(ga, g);
          }
        }
        if (b.requires_grad()) {
          Buffer& gb = ensure_grad(b.unwrap());
          if (bc == Broadcast::b_scalar) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += g.get(i);
            gb.set(0, gb.get(0) - s);
          } else {
            for (std::int64_t i = 0; i < n; ++i) gb.set(i, gb.get(i) - g.get(i));
          }
        }
      },
      a, b);
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_mode("mul", a, b);
  const Tensor& big = (bc == Broadcast::a_scalar) ? b : a;
  Tensor out = make_tensor(big.shape());
  CINESEG_DISPATCH(prec_of(a), {
    const auto* ap = a.unwrap().data.as<scalar_t>();
    const auto* bp = b.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    const std::int64_t n = out.numel();
    if (bc == Broadcast::none) {
      for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
    } else if (bc == Broadcast::b_scalar) {
      const scalar_t s = bp[0];
      for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] * s;
    } else {
      const scalar_t s = ap[0];
      for (std::int64_t i = 0; i < n; ++i) op[i] = s * bp[i];
    }
  });
  record_if(
      out,
      [a, b, out, bc]() {
        const Buffer& g = *out.unwrap().grad;
        const Buffer& ad = a.unwrap().data;
        const Buffer& bd = b.unwrap().data;
        const std::int64_t n = out.numel();
        if (a.requires_grad()) {
          Buffer& ga = ensure_grad(a.unwrap());
          if (bc == Broadcast::a_scalar) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += g.get(i) * bd.get(i);
            ga.set(0, ga.get(0) + s);
          } else if (bc == Broadcast::b_scalar) {
            const double s = bd.get(0);
            for (std::int64_t i = 0; i < n; ++i) ga.set(i, ga.get(i) + g.get(i) * s);
          } else {
            for (std::int64_t i = 0; i < n; ++i) ga.set(i, ga.get(i) + g.get(i) * bd.get(i));
          }
        }
        if (b.requires_grad()) {
          Buffer& gb = ensure_grad(b.unwrap());
          if (bc == Broadcast::b_scalar) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += g.get(i) * ad.get(i);
            gb.set(0, gb.get(0) + s);
          } else if (bc == Broadcast::a_scalar) {
            const double s = ad.get(0);
            for (std::int64_t i = 0; i < n; ++i) gb.set(i, gb.get(i) + g.get(i) * s);
          } else {
            for (std::int64_t i = 0; i < n; ++i) gb.set(i, gb.get(i) + g.get(i) * ad.get(i));
          }
        }
      },
      a, b);
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_mode("div", a, b);
  const Tensor& big = (bc == Broadcast::a_scalar) ? b : a;
  Tensor out = make_tensor(big.shape());
  bool finite = true;
  CINESEG_DISPATCH(prec_of(a), {
    const auto* ap = a.unwrap().data.as<scalar_t>();
    const auto* bp = b.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      const scalar_t av = (bc == Broadcast::a_scalar) ? ap[0] : ap[i];
      const scalar_t bv = (bc == Broadcast::b_scalar) ? bp[0] : bp[i];
      op[i] = av / bv;
      if (!std::isfinite(double(op[i]))) finite = false;
    }
  });
  if (!finite) throw NumericError("div: non-finite result (zero divisor?)");
  record_if(
      out,
      [a, b, out, bc]() {
        const Buffer& g = *out.unwrap().grad;
        const Buffer& ad = a.unwrap().data;
        const Buffer& bd = b.unwrap().data;
        const std::int64_t n = out.numel();
        auto aval = [&](std::int64_t i) { return ad.get(bc == Broadcast::a_scalar ? 0 : i); };
        auto bval = [&](std::int64_t i) { return bd.get(bc == Broadcast::b_scalar ? 0 : i); };
        if (a.requires_grad()) {
          Buffer& ga = ensure_grad(a.unwrap());
          if (bc == Broadcast::a_scalar) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += g.get(i) / bval(i);
            ga.set(0, ga.get(0) + s);
          } else {
            for (std::int64_t i = 0; i < n; ++i) ga.set(i, ga.get(i) + g.get(i) / bval(i));
          }
        }
        if (b.requires_grad()) {
          Buffer& gb = ensure_grad(b.unwrap());
          if (bc == Broadcast::b_scalar) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
              const double bv = bval(i);
              s -= g.get(i) * aval(i) / (bv * bv);
            }
            gb.set(0, gb.get(0) + s);
          } else {
            for (std::int64_t i = 0; i < n; ++i) {
              const double bv = bval(i);
              gb.set(i, gb.get(i) - g.get(i) * aval(i) / (bv * bv));
            }
          }
        }
      },
      a, b);
  return out;
}

Tensor scalar_mul(const Tensor& a, double c) {
  Tensor out = make_tensor(a.shape());
  CINESEG_DISPATCH(prec_of(a), {
    const auto* ap = a.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    const scalar_t s = static_cast<scalar_t>(c);
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] * s;
  });
  record_if(
      out,
      [a, out, c]() {
        if (!a.requires_grad()) return;
        Buffer& ga = ensure_grad(a.unwrap());
        const Buffer& g = *out.unwrap().grad;
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) ga.set(i, ga.get(i) + c * g.get(i));
      },
      a);
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = make_tensor(a.shape());
  CINESEG_DISPATCH(prec_of(a), {
    const auto* ap = a.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    const scalar_t s = static_cast<scalar_t>(c);
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) op[i] = ap[i] + s;
  });
  record_if(
      out,
      [a, out]() {
        if (!a.requires_grad()) return;
        accum(ensure_grad(a.unwrap()), *out.unwrap().grad);
      },
      a);
  return out;
}

// ------------------------------------------------------------- unary ops

Tensor neg(const Tensor& x) {
  Tensor out = unary_op(x, [](double v) { return -v; });
  record_if(out, unary_back(x, out, [](double, double) { return -1.0; }), x);
  return out;
}

Tensor square(const Tensor& x) {
  Tensor out = unary_op(x, [](double v) { return v * v; });
  record_if(out, unary_back(x, out, [](double v, double) { return 2.0 * v; }), x);
  return out;
}

Tensor abs(const Tensor& x) {
  Tensor out = unary_op(x, [](double v) { return std::fabs(v); });
  // subgradient 0 at v == 0
  record_if(out, unary_back(x, out, [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }),
            x);
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_tensor(x.shape());
  CINESEG_DISPATCH(prec_of(x), {
    const auto* xp = x.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) op[i] = xp[i] > 0 ? xp[i] : scalar_t(0);
  });
  record_if(
      out,
      [x, out]() {
        if (!x.requires_grad()) return;
        Node& xn = x.unwrap();
        Buffer& gx = ensure_grad(xn);
        CINESEG_DISPATCH(xn.data.prec, {
          relu_backward_arrays(gx.as<scalar_t>(), xn.data.as<scalar_t>(),
                               out.unwrap().grad->as<scalar_t>(), xn.numel());
        });
      },
      x);
  return out;
}

Tensor sigmoid(const Tensor& x) {
  // numerically stable in both tails
  Tensor out = unary_op(x, [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  record_if(out, unary_back(x, out, [](double, double y) { return y * (1.0 - y); }), x);
  return out;
}

Tensor log(const Tensor& x) {
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    if (!(x.at(i) > 0.0)) {
      throw NumericError("log: non-positive input " + std::to_string(x.at(i)) + " at index " +
                         std::to_string(i) + " (use log_guarded to clamp)");
    }
  }
  Tensor out = unary_op(x, [](double v) { return std::log(v); });
  record_if(out, unary_back(x, out, [](double v, double) { return 1.0 / v; }), x);
  return out;
}

Tensor log_guarded(const Tensor& x) {
  constexpr double kFloor = 1e-12;
  Tensor out = unary_op(x, [](double v) { return std::log(v < kFloor ? kFloor : v); });
  record_if(out,
            unary_back(x, out, [](double v, double) { return v < kFloor ? 0.0 : 1.0 / v; }), x);
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ValueError("clamp: lo > hi");
  Tensor out = unary_op(x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); });
  record_if(out,
            unary_back(x, out, [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; }),
            x);
  return out;
}

// ------------------------------------------------------------ reductions

Tensor sum(const Tensor& x) {
  Tensor out = make_tensor({1});
  out.unwrap().data.set(0, buffer_sum(x.unwrap().data));
  record_if(
      out,
      [x, out]() {
        if (!x.requires_grad()) return;
        Buffer& gx = ensure_grad(x.unwrap());
        const double g = out.unwrap().grad->get(0);
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) gx.set(i, gx.get(i) + g);
      },
      x);
  return out;
}

Tensor mean(const Tensor& x) {
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  Tensor out = make_tensor({1});
  out.unwrap().data.set(0, buffer_sum(x.unwrap().data) * inv_n);
  record_if(
      out,
      [x, out, inv_n]() {
        if (!x.requires_grad()) return;
        Buffer& gx = ensure_grad(x.unwrap());
        const double g = out.unwrap().grad->get(0) * inv_n;
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) gx.set(i, gx.get(i) + g);
      },
      x);
  return out;
}

// -------------------------------------------------------------- shape ops

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = make_tensor(std::move(shape));
  out.unwrap().data = x.unwrap().data;
  record_if(
      out,
      [x, out]() {
        if (!x.requires_grad()) return;
        accum(ensure_grad(x.unwrap()), *out.unwrap().grad);
      },
      x);
  return out;
}

namespace {

// outer * axis_len * inner decomposition for concat/slice
struct AxisSplit {
  std::int64_t outer = 1, axis_len = 1, inner = 1;
};

AxisSplit axis_split(const std::vector<int>& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    if (i < axis) {
      s.outer *= shape[i];
    } else if (i == axis) {
      s.axis_len = shape[i];
    } else {
      s.inner *= shape[i];
    }
  }
  return s;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ValueError("concat: empty input list");
  const auto& s0 = xs[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size())) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  }
  int total_axis = 0;
  for (const Tensor& x : xs) {
    const auto& s = x.shape();
    if (s.size() != s0.size()) {
      throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
    }
    for (int i = 0; i < static_cast<int>(s.size()); ++i) {
      if (i != axis && s[i] != s0[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
      }
    }
    total_axis += s[axis];
  }
  std::vector<int> out_shape = s0;
  out_shape[axis] = total_axis;
  Tensor out = make_tensor(out_shape);
  const AxisSplit os = axis_split(out_shape, axis);

  CINESEG_DISPATCH(prec_of(xs[0]), {
    auto* op = out.unwrap().data.as<scalar_t>();
    std::int64_t axis_off = 0;
    for (const Tensor& x : xs) {
      const AxisSplit is = axis_split(x.shape(), axis);
      const auto* xp = x.unwrap().data.as<scalar_t>();
      for (std::int64_t o = 0; o < is.outer; ++o) {
        std::memcpy(op + (o * os.axis_len + axis_off) * os.inner, xp + o * is.axis_len * is.inner,
                    sizeof(scalar_t) * static_cast<std::size_t>(is.axis_len * is.inner));
      }
      axis_off += is.axis_len;
    }
  });

  GradTape* tape = GradTape::active();
  bool any = false;
  for (const Tensor& x : xs) any = any || x.requires_grad();
  if (tape && any) {
    out.unwrap().requires_grad = true;
    std::vector<Tensor> inputs = xs;
    tape->record(out.node(), [inputs, out, axis, os]() {
      const Buffer& g = *out.unwrap().grad;
      std::int64_t axis_off = 0;
      for (const Tensor& x : inputs) {
        const AxisSplit is = axis_split(x.shape(), axis);
        if (x.requires_grad()) {
          Buffer& gx = ensure_grad(x.unwrap());
          for (std::int64_t o = 0; o < is.outer; ++o) {
            const std::int64_t src = (o * os.axis_len + axis_off) * os.inner;
            const std::int64_t dst = o * is.axis_len * is.inner;
            const std::int64_t len = is.axis_len * is.inner;
            for (std::int64_t i = 0; i < len; ++i) gx.set(dst + i, gx.get(dst + i) + g.get(src + i));
          }
        }
        axis_off += is.axis_len;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  const auto& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  if (start < 0 || len <= 0 || start + len > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") invalid for axis length " + std::to_string(s[axis]));
  }
  std::vector<int> out_shape = s;
  out_shape[axis] = len;
  Tensor out = make_tensor(out_shape);
  const AxisSplit is = axis_split(s, axis);

  CINESEG_DISPATCH(prec_of(x), {
    const auto* xp = x.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    for (std::int64_t o = 0; o < is.outer; ++o) {
      std::memcpy(op + o * len * is.inner, xp + (o * is.axis_len + start) * is.inner,
                  sizeof(scalar_t) * static_cast<std::size_t>(len * is.inner));
    }
  });
  record_if(
      out,
      [x, out, start, len, is]() {
        if (!x.requires_grad()) return;
        Buffer& gx = ensure_grad(x.unwrap());
        const Buffer& g = *out.unwrap().grad;
        for (std::int64_t o = 0; o < is.outer; ++o) {
          const std::int64_t dst = (o * is.axis_len + start) * is.inner;
          const std::int64_t src = o * len * is.inner;
          const std::int64_t cnt = static_cast<std::int64_t>(len) * is.inner;
          for (std::int64_t i = 0; i < cnt; ++i) gx.set(dst + i, gx.get(dst + i) + g.get(src + i));
        }
      },
      x);
  return out;
}

// ---------------------------------------------------------------- conv2d

namespace {

struct ConvDims {
  int N, IC, H, W, OC, KH, KW, stride, pad, OH, OW, Hp, Wp;
};

template <class T>
std::vector<T> pad_input(const T* x, const ConvDims& d) {
  std::vector<T> xpad(static_cast<std::size_t>(d.N) * d.IC * d.Hp * d.Wp, T(0));
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (int n = 0; n < d.N; ++n) {
    for (int c = 0; c < d.IC; ++c) {
      const T* src = x + (static_cast<std::size_t>(n) * d.IC + c) * d.H * d.W;
      T* dst = xpad.data() + (static_cast<std::size_t>(n) * d.IC + c) * d.Hp * d.Wp;
      for (int y = 0; y < d.H; ++y) {
        std::memcpy(dst + static_cast<std::size_t>(y + d.pad) * d.Wp + d.pad,
                    src + static_cast<std::size_t>(y) * d.W, sizeof(T) * static_cast<std::size_t>(d.W));
      }
    }
  }
  return xpad;
}

// Narrow outputs (OW <= 16): a 4-channel row tile stays in registers across
// the whole (ic, tap) reduction instead of round-tripping through memory.
template <class T>
void conv2d_forward_narrow(const T* xpad, const T* w, const T* b, T* y, const ConvDims& d,
                           int n, int oc0, int bs) {
  constexpr int kMaxW = 16;
  const int ktaps = d.KH * d.KW;
  const std::size_t plane = static_cast<std::size_t>(d.Hp) * d.Wp;
  const T* xbase = xpad + static_cast<std::size_t>(n) * d.IC * plane;
  for (int oy = 0; oy < d.OH; ++oy) {
    T acc[4][kMaxW];
    for (int j = 0; j < bs; ++j) {
      const T bj = b ? b[oc0 + j] : T(0);
      for (int ox = 0; ox < d.OW; ++ox) acc[j][ox] = bj;
    }
    for (int ic = 0; ic < d.IC; ++ic) {
      const T* xp = xbase + ic * plane + static_cast<std::size_t>(oy) * d.Wp;
      for (int t = 0; t < ktaps; ++t) {
        const T* xr = xp + (t / d.KW) * d.Wp + (t % d.KW);
        for (int j = 0; j < bs; ++j) {
          const T wv = w[((static_cast<std::size_t>(oc0 + j) * d.IC + ic)) * ktaps + t];
          for (int ox = 0; ox < d.OW; ++ox) acc[j][ox] += wv * xr[ox];
        }
      }
    }
    for (int j = 0; j < bs; ++j) {
      T* orow = y + ((static_cast<std::size_t>(n) * d.OC + oc0 + j) * d.OH + oy) * d.OW;
      for (int ox = 0; ox < d.OW; ++ox) orow[ox] = acc[j][ox];
    }
  }
}

// Output-stationary blocks of 4 output channels; single-channel tail path.
template <class T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, const ConvDims& d) {
  const std::vector<T> xpad = pad_input(x, d);
  const int ktaps = d.KH * d.KW;
  const std::size_t plane = static_cast<std::size_t>(d.Hp) * d.Wp;
  const int oc_blocks = (d.OC + 3) / 4;

  if (d.stride == 1 && d.OW <= 16) {
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
    for (int n = 0; n < d.N; ++n) {
      for (int ob = 0; ob < oc_blocks; ++ob) {
        const int oc0 = ob * 4;
        conv2d_forward_narrow(xpad.data(), w, b, y, d, n, oc0, std::min(4, d.OC - oc0));
      }
    }
    return;
  }

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (int n = 0; n < d.N; ++n) {
    for (int ob = 0; ob < oc_blocks; ++ob) {
      const int oc0 = ob * 4;
      const int bs = std::min(4, d.OC - oc0);
      const T* xbase = xpad.data() + static_cast<std::size_t>(n) * d.IC * plane;
      if (bs == 4) {
        const T* wk[4];
        T* orow[4];
        for (int oy = 0; oy < d.OH; ++oy) {
          for (int j = 0; j < 4; ++j) {
            orow[j] = y + ((static_cast<std::size_t>(n) * d.OC + oc0 + j) * d.OH + oy) * d.OW;
            const T bj = b ? b[oc0 + j] : T(0);
            for (int ox = 0; ox < d.OW; ++ox) orow[j][ox] = bj;
          }
          for (int ic = 0; ic < d.IC; ++ic) {
            const T* xp = xbase + ic * plane + static_cast<std::size_t>(oy) * d.stride * d.Wp;
            for (int j = 0; j < 4; ++j) wk[j] = w + ((static_cast<std::size_t>(oc0 + j) * d.IC + ic)) * ktaps;
            for (int t = 0; t < ktaps; ++t) {
              const T* xr = xp + (t / d.KW) * d.Wp + (t % d.KW);
              const T w0 = wk[0][t], w1 = wk[1][t], w2 = wk[2][t], w3 = wk[3][t];
              T* o0 = orow[0];
              T* o1 = orow[1];
              T* o2 = orow[2];
              T* o3 = orow[3];
              if (d.stride == 1) {
                for (int ox = 0; ox < d.OW; ++ox) {
                  const T xv = xr[ox];
                  o0[ox] += w0 * xv;
                  o1[ox] += w1 * xv;
                  o2[ox] += w2 * xv;
                  o3[ox] += w3 * xv;
                }
              } else {
                for (int ox = 0; ox < d.OW; ++ox) {
                  const T xv = xr[static_cast<std::size_t>(ox) * d.stride];
                  o0[ox] += w0 * xv;
                  o1[ox] += w1 * xv;
                  o2[ox] += w2 * xv;
                  o3[ox] += w3 * xv;
                }
              }
            }
          }
        }
      } else {
        for (int j = 0; j < bs; ++j) {
          const int oc = oc0 + j;
          for (int oy = 0; oy < d.OH; ++oy) {
            T* orow = y + ((static_cast<std::size_t>(n) * d.OC + oc) * d.OH + oy) * d.OW;
            const T bj = b ? b[oc] : T(0);
            for (int ox = 0; ox < d.OW; ++ox) orow[ox] = bj;
            for (int ic = 0; ic < d.IC; ++ic) {
              const T* xp = xbase + ic * plane + static_cast<std::size_t>(oy) * d.stride * d.Wp;
              const T* wk = w + ((static_cast<std::size_t>(oc) * d.IC + ic)) * ktaps;
              for (int t = 0; t < ktaps; ++t) {
                const T* xr = xp + (t / d.KW) * d.Wp + (t % d.KW);
                const T wv = wk[t];
                for (int ox = 0; ox < d.OW; ++ox) {
                  orow[ox] += wv * xr[static_cast<std::size_t>(ox) * d.stride];
                }
              }
            }
          }
        }
      }
    }
  }
}

// deterministic 8-lane dot product: the lane split depends only on the
// length, so results are bit-stable across runs and thread counts
template <class T>
T lane_dot(const T* a, const T* b, int n) {
  T lanes[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) lanes[j] += a[i + j] * b[i + j];
  }
  for (; i < n; ++i) lanes[i & 7] += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

template <class T>
void conv2d_backward(const T* x, const T* w, const T* g, T* gx, T* gw, T* gb, const ConvDims& d,
                     bool need_gx, bool need_gw, bool need_gb) {
  const int ktaps = d.KH * d.KW;
  const std::size_t plane = static_cast<std::size_t>(d.Hp) * d.Wp;
  const std::size_t gplane = static_cast<std::size_t>(d.OH) * d.OW;

  if (need_gb) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int oc = 0; oc < d.OC; ++oc) {
      T acc = T(0);
      for (int n = 0; n < d.N; ++n) {
        const T* gp = g + (static_cast<std::size_t>(n) * d.OC + oc) * gplane;
        for (std::size_t i = 0; i < gplane; ++i) acc += gp[i];
      }
      gb[oc] += acc;
    }
  }

  if (need_gw) {
    const std::vector<T> xpad = pad_input(x, d);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int oc = 0; oc < d.OC; ++oc) {
      for (int ic = 0; ic < d.IC; ++ic) {
        if (d.stride == 1 && d.OW >= 4) {
          // all taps of one (oc, ic) pair in a single sweep over g
          T acc[9 * 9];  // KH*KW <= 81 is ample for this codebase
          for (int t = 0; t < ktaps; ++t) acc[t] = T(0);
          for (int n = 0; n < d.N; ++n) {
            const T* gp = g + (static_cast<std::size_t>(n) * d.OC + oc) * gplane;
            const T* xp = xpad.data() + (static_cast<std::size_t>(n) * d.IC + ic) * plane;
            for (int oy = 0; oy < d.OH; ++oy) {
              const T* gr = gp + static_cast<std::size_t>(oy) * d.OW;
              for (int t = 0; t < ktaps; ++t) {
                const T* xr = xp + (static_cast<std::size_t>(oy) + t / d.KW) * d.Wp + (t % d.KW);
                acc[t] += lane_dot(gr, xr, d.OW);
              }
            }
          }
          for (int t = 0; t < ktaps; ++t) {
            gw[(static_cast<std::size_t>(oc) * d.IC + ic) * ktaps + t] += acc[t];
          }
        } else {
          for (int t = 0; t < ktaps; ++t) {
            T acc = T(0);
            for (int n = 0; n < d.N; ++n) {
              const T* gp = g + (static_cast<std::size_t>(n) * d.OC + oc) * gplane;
              const T* xp = xpad.data() + (static_cast<std::size_t>(n) * d.IC + ic) * plane +
                            (t / d.KW) * d.Wp + (t % d.KW);
              for (int oy = 0; oy < d.OH; ++oy) {
                const T* gr = gp + static_cast<std::size_t>(oy) * d.OW;
                const T* xr = xp + static_cast<std::size_t>(oy) * d.stride * d.Wp;
                for (int ox = 0; ox < d.OW; ++ox) {
                  acc += gr[ox] * xr[static_cast<std::size_t>(ox) * d.stride];
                }
              }
            }
            gw[(static_cast<std::size_t>(oc) * d.IC + ic) * ktaps + t] += acc;
          }
        }
      }
    }
  }

  if (need_gx && d.stride == 1 && d.KH - 1 - d.pad >= 0 && d.KW - 1 - d.pad >= 0) {
    // grad w.r.t. the input of a stride-1 convolution is itself a stride-1
    // convolution of the output gradient with the flipped, transposed
    // kernel; reuse the blocked forward kernel
    std::vector<T> wt(static_cast<std::size_t>(d.IC) * d.OC * ktaps);
    for (int oc = 0; oc < d.OC; ++oc) {
      for (int ic = 0; ic < d.IC; ++ic) {
        for (int t = 0; t < ktaps; ++t) {
          wt[(static_cast<std::size_t>(ic) * d.OC + oc) * ktaps + (ktaps - 1 - t)] =
              w[(static_cast<std::size_t>(oc) * d.IC + ic) * ktaps + t];
        }
      }
    }
    ConvDims dt;
    dt.N = d.N;
    dt.IC = d.OC;
    dt.H = d.OH;
    dt.W = d.OW;
    dt.OC = d.IC;
    dt.KH = d.KH;
    dt.KW = d.KW;
    dt.stride = 1;
    dt.pad = d.KH - 1 - d.pad;
    dt.Hp = dt.H + 2 * dt.pad;
    dt.Wp = dt.W + 2 * dt.pad;
    dt.OH = dt.Hp - d.KH + 1;
    dt.OW = dt.Wp - d.KW + 1;
    std::vector<T> scratch(static_cast<std::size_t>(d.N) * d.IC * d.H * d.W);
    conv2d_forward(g, wt.data(), static_cast<const T*>(nullptr), scratch.data(), dt);
    const std::size_t total = scratch.size();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::size_t i = 0; i < total; ++i) gx[i] += scratch[i];
  } else if (need_gx) {
    // strided / oversized-padding fallback: scatter into a padded scratch
    std::vector<T> gxpad(static_cast<std::size_t>(d.N) * d.IC * plane, T(0));
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
    for (int n = 0; n < d.N; ++n) {
      for (int ic = 0; ic < d.IC; ++ic) {
        T* gxp = gxpad.data() + (static_cast<std::size_t>(n) * d.IC + ic) * plane;
        for (int oc = 0; oc < d.OC; ++oc) {
          const T* gp = g + (static_cast<std::size_t>(n) * d.OC + oc) * gplane;
          const T* wk = w + ((static_cast<std::size_t>(oc) * d.IC + ic)) * ktaps;
          for (int t = 0; t < ktaps; ++t) {
            const T wv = wk[t];
            for (int oy = 0; oy < d.OH; ++oy) {
              const T* gr = gp + static_cast<std::size_t>(oy) * d.OW;
              T* xr = gxp + (static_cast<std::size_t>(oy) * d.stride + t / d.KW) * d.Wp + (t % d.KW);
              for (int ox = 0; ox < d.OW; ++ox) {
                xr[static_cast<std::size_t>(ox) * d.stride] += wv * gr[ox];
              }
            }
          }
        }
        T* dst = gx + (static_cast<std::size_t>(n) * d.IC + ic) * d.H * d.W;
        for (int y = 0; y < d.H; ++y) {
          const T* src = gxp + static_cast<std::size_t>(y + d.pad) * d.Wp + d.pad;
          T* drow = dst + static_cast<std::size_t>(y) * d.W;
          for (int xcol = 0; xcol < d.W; ++xcol) drow[xcol] += src[xcol];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  require(x.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  require(w.rank() == 4, "conv2d: weight must be [OC,IC,KH,KW], got " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: in-channel mismatch, input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(w.shape()));
  }
  if (stride != 1 && stride != 2) throw ValueError("conv2d: stride must be 1 or 2");
  if (pad < 0) throw ValueError("conv2d: negative padding");
  check_same_precision("conv2d", x, w);
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(bias.rank() == 1 && bias.dim(0) == w.dim(0),
            "conv2d: bias must be [OC], got " + shape_str(bias.shape()));
  }

  ConvDims d;
  d.N = x.dim(0);
  d.IC = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.OC = w.dim(0);
  d.KH = w.dim(2);
  d.KW = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.Hp = d.H + 2 * pad;
  d.Wp = d.W + 2 * pad;
  d.OH = (d.Hp - d.KH) / stride + 1;
  d.OW = (d.Wp - d.KW) / stride + 1;
  require(d.OH > 0 && d.OW > 0, "conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                                    shape_str(x.shape()));

  Tensor out = make_tensor({d.N, d.OC, d.OH, d.OW});
  CINESEG_DISPATCH(prec_of(x), {
    conv2d_forward(x.unwrap().data.as<scalar_t>(), w.unwrap().data.as<scalar_t>(),
                   has_bias ? bias.unwrap().data.as<scalar_t>() : nullptr,
                   out.unwrap().data.as<scalar_t>(), d);
  });

  GradTape* tape = GradTape::active();
  const bool any =
      x.requires_grad() || w.requires_grad() || (has_bias && bias.requires_grad());
  if (tape && any) {
    out.unwrap().requires_grad = true;
    tape->record(out.node(), [x, w, bias, out, d, has_bias]() {
      const bool need_gx = x.requires_grad();
      const bool need_gw = w.requires_grad();
      const bool need_gb = has_bias && bias.requires_grad();
      CINESEG_DISPATCH(out.precision(), {
        conv2d_backward(x.unwrap().data.as<scalar_t>(), w.unwrap().data.as<scalar_t>(),
                        out.unwrap().grad->as<scalar_t>(),
                        need_gx ? ensure_grad(x.unwrap()).as<scalar_t>() : nullptr,
                        need_gw ? ensure_grad(w.unwrap()).as<scalar_t>() : nullptr,
                        need_gb ? ensure_grad(bias.unwrap()).as<scalar_t>() : nullptr, d, need_gx,
                        need_gw, need_gb);
      });
    });
  }
  return out;
}

// ------------------------------------------------------- pool / upsample

Tensor maxpool2(const Tensor& x) {
  require(x.rank() == 4, "maxpool2: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0) throw ShapeError("maxpool2: height " + std::to_string(H) + " not divisible by 2");
  if (W % 2 != 0) throw ShapeError("maxpool2: width " + std::to_string(W) + " not divisible by 2");
  const int OH = H / 2, OW = W / 2;
  Tensor out = make_tensor({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(N) * C * OH * OW);

  CINESEG_DISPATCH(prec_of(x), {
    const auto* xp = x.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    std::size_t oi = 0;
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const scalar_t* pl = xp + (static_cast<std::size_t>(n) * C + c) * H * W;
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox, ++oi) {
            const int y0 = 2 * oy, x0 = 2 * ox;
            // ties resolve to the first in scan order
            std::int32_t best = y0 * W + x0;
            scalar_t bv = pl[best];
            const std::int32_t cands[3] = {y0 * W + x0 + 1, (y0 + 1) * W + x0, (y0 + 1) * W + x0 + 1};
            for (std::int32_t idx : cands) {
              if (pl[idx] > bv) {
                bv = pl[idx];
                best = idx;
              }
            }
            op[oi] = bv;
            (*argmax)[oi] = best;
          }
        }
      }
    }
  });
  record_if(
      out,
      [x, out, argmax, N, C, H, W, OH, OW]() {
        if (!x.requires_grad()) return;
        Buffer& gx = ensure_grad(x.unwrap());
        const Buffer& g = *out.unwrap().grad;
        std::size_t oi = 0;
        for (int n = 0; n < N; ++n) {
          for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int k = 0; k < OH * OW; ++k, ++oi) {
              const std::size_t t = base + static_cast<std::size_t>((*argmax)[oi]);
              gx.set(t, gx.get(t) + g.get(oi));
            }
          }
        }
      },
      x);
  return out;
}

Tensor avgpool2(const Tensor& x) {
  require(x.rank() == 4, "avgpool2: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = H / 2, OW = W / 2;
  require(OH > 0 && OW > 0, "avgpool2: input too small " + shape_str(x.shape()));
  Tensor out = make_tensor({N, C, OH, OW});
  CINESEG_DISPATCH(prec_of(x), {
    const auto* xp = x.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    std::size_t oi = 0;
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const scalar_t* pl = xp + (static_cast<std::size_t>(n) * C + c) * H * W;
        for (int oy = 0; oy < OH; ++oy) {
          for (int ox = 0; ox < OW; ++ox, ++oi) {
            const int y0 = 2 * oy, x0 = 2 * ox;
            op[oi] = static_cast<scalar_t>(
                (pl[y0 * W + x0] + pl[y0 * W + x0 + 1] + pl[(y0 + 1) * W + x0] +
                 pl[(y0 + 1) * W + x0 + 1]) *
                scalar_t(0.25));
          }
        }
      }
    }
  });
  record_if(
      out,
      [x, out, N, C, H, W, OH, OW]() {
        if (!x.requires_grad()) return;
        Buffer& gx = ensure_grad(x.unwrap());
        const Buffer& g = *out.unwrap().grad;
        std::size_t oi = 0;
        for (int n = 0; n < N; ++n) {
          for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < OH; ++oy) {
              for (int ox = 0; ox < OW; ++ox, ++oi) {
                const double q = g.get(oi) * 0.25;
                const std::size_t p = base + static_cast<std::size_t>(2 * oy) * W + 2 * ox;
                gx.set(p, gx.get(p) + q);
                gx.set(p + 1, gx.get(p + 1) + q);
                gx.set(p + W, gx.get(p + W) + q);
                gx.set(p + W + 1, gx.get(p + W + 1) + q);
              }
            }
          }
        }
      },
      x);
  return out;
}

Tensor upsample_nearest2(const Tensor& x) {
  require(x.rank() == 4, "upsample_nearest2: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = make_tensor({N, C, 2 * H, 2 * W});
  CINESEG_DISPATCH(prec_of(x), {
    const auto* xp = x.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    for (std::int64_t pc = 0; pc < static_cast<std::int64_t>(N) * C; ++pc) {
      const scalar_t* pl = xp + pc * H * W;
      scalar_t* ol = op + pc * 4 * H * W;
      for (int y = 0; y < H; ++y) {
        scalar_t* r0 = ol + static_cast<std::size_t>(2 * y) * 2 * W;
        scalar_t* r1 = r0 + 2 * W;
        const scalar_t* xr = pl + static_cast<std::size_t>(y) * W;
        for (int xc = 0; xc < W; ++xc) {
          r0[2 * xc] = xr[xc];
          r0[2 * xc + 1] = xr[xc];
          r1[2 * xc] = xr[xc];
          r1[2 * xc + 1] = xr[xc];
        }
      }
    }
  });
  record_if(
      out,
      [x, out, N, C, H, W]() {
        if (!x.requires_grad()) return;
        Buffer& gx = ensure_grad(x.unwrap());
        const Buffer& g = *out.unwrap().grad;
        for (std::int64_t pc = 0; pc < static_cast<std::int64_t>(N) * C; ++pc) {
          const std::size_t ob = static_cast<std::size_t>(pc) * 4 * H * W;
          const std::size_t ib = static_cast<std::size_t>(pc) * H * W;
          for (int y = 0; y < H; ++y) {
            for (int xc = 0; xc < W; ++xc) {
              const std::size_t o = ob + static_cast<std::size_t>(2 * y) * 2 * W + 2 * xc;
              const double s = g.get(o) + g.get(o + 1) + g.get(o + 2 * W) + g.get(o + 2 * W + 1);
              gx.set(ib + static_cast<std::size_t>(y) * W + xc,
                     gx.get(ib + static_cast<std::size_t>(y) * W + xc) + s);
            }
          }
        }
      },
      x);
  return out;
}

// ------------------------------------------------------------ grid_sample

Tensor grid_sample(const Tensor& x, const Tensor& flow) {
  require(x.rank() == 4, "grid_sample: image must be [N,C,H,W], got " + shape_str(x.shape()));
  require(flow.rank() == 4 && flow.dim(1) == 2,
          "grid_sample: flow must be [N,2,H,W], got " + shape_str(flow.shape()));
  if (x.dim(0) != flow.dim(0) || x.dim(2) != flow.dim(2) || x.dim(3) != flow.dim(3)) {
    throw ShapeError("grid_sample: image " + shape_str(x.shape()) + " vs flow " +
                     shape_str(flow.shape()));
  }
  check_same_precision("grid_sample", x, flow);
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = make_tensor({N, C, H, W});

  CINESEG_DISPATCH(prec_of(x), {
    const auto* xp = x.unwrap().data.as<scalar_t>();
    const auto* fp = flow.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
      const scalar_t* fx = fp + static_cast<std::size_t>(n) * 2 * hw;
      const scalar_t* fy = fx + hw;
      for (int yy = 0; yy < H; ++yy) {
        for (int xx = 0; xx < W; ++xx) {
          const std::size_t pi = static_cast<std::size_t>(yy) * W + xx;
          double sx = double(xx) + double(fx[pi]);
          double sy = double(yy) + double(fy[pi]);
          sx = std::min(std::max(sx, 0.0), double(W - 1));
          sy = std::min(std::max(sy, 0.0), double(H - 1));
          const int x0 = static_cast<int>(sx);
          const int y0 = static_cast<int>(sy);
          const int x1 = std::min(x0 + 1, W - 1);
          const int y1 = std::min(y0 + 1, H - 1);
          const double wx = sx - x0;
          const double wy = sy - y0;
          for (int c = 0; c < C; ++c) {
            const scalar_t* pl = xp + (static_cast<std::size_t>(n) * C + c) * hw;
            const double v00 = pl[static_cast<std::size_t>(y0) * W + x0];
            const double v01 = pl[static_cast<std::size_t>(y0) * W + x1];
            const double v10 = pl[static_cast<std::size_t>(y1) * W + x0];
            const double v11 = pl[static_cast<std::size_t>(y1) * W + x1];
            const double v = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                             wy * ((1.0 - wx) * v10 + wx * v11);
            op[(static_cast<std::size_t>(n) * C + c) * hw + pi] = static_cast<scalar_t>(v);
          }
        }
      }
    }
  });

  record_if(
      out,
      [x, flow, out, N, C, H, W]() {
        const bool need_gx = x.requires_grad();
        const bool need_gf = flow.requires_grad();
        const Buffer& g = *out.unwrap().grad;
        Buffer* gx = need_gx ? &ensure_grad(x.unwrap()) : nullptr;
        Buffer* gf = need_gf ? &ensure_grad(flow.unwrap()) : nullptr;
        const Buffer& xd = x.unwrap().data;
        const Buffer& fd = flow.unwrap().data;
        const std::size_t hw = static_cast<std::size_t>(H) * W;
        for (int n = 0; n < N; ++n) {
          for (int yy = 0; yy < H; ++yy) {
            for (int xx = 0; xx < W; ++xx) {
              const std::size_t pi = static_cast<std::size_t>(yy) * W + xx;
              const std::size_t fxb = static_cast<std::size_t>(n) * 2 * hw + pi;
              const std::size_t fyb = fxb + hw;
              double sx = double(xx) + fd.get(fxb);
              double sy = double(yy) + fd.get(fyb);
              const bool cx = sx <= 0.0 || sx >= double(W - 1);
              const bool cy = sy <= 0.0 || sy >= double(H - 1);
              sx = std::min(std::max(sx, 0.0), double(W - 1));
              sy = std::min(std::max(sy, 0.0), double(H - 1));
              const int x0 = static_cast<int>(sx);
              const int y0 = static_cast<int>(sy);
              const int x1 = std::min(x0 + 1, W - 1);
              const int y1 = std::min(y0 + 1, H - 1);
              const double wx = sx - x0;
              const double wy = sy - y0;
              double acc_dx = 0.0, acc_dy = 0.0;
              for (int c = 0; c < C; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * C + c) * hw;
                const double gv = g.get(base + pi);
                if (gv == 0.0 && !need_gf) continue;
                const std::size_t i00 = base + static_cast<std::size_t>(y0) * W + x0;
                const std::size_t i01 = base + static_cast<std::size_t>(y0) * W + x1;
                const std::size_t i10 = base + static_cast<std::size_t>(y1) * W + x0;
                const std::size_t i11 = base + static_cast<std::size_t>(y1) * W + x1;
                if (need_gx) {
                  gx->set(i00, gx->get(i00) + gv * (1.0 - wy) * (1.0 - wx));
                  gx->set(i01, gx->get(i01) + gv * (1.0 - wy) * wx);
                  gx->set(i10, gx->get(i10) + gv * wy * (1.0 - wx));
                  gx->set(i11, gx->get(i11) + gv * wy * wx);
                }
                if (need_gf) {
                  const double v00 = xd.get(i00), v01 = xd.get(i01);
                  const double v10 = xd.get(i10), v11 = xd.get(i11);
                  acc_dx += gv * ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10));
                  acc_dy += gv * ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01));
                }
              }
              if (need_gf) {
                if (!cx) gf->set(fxb, gf->get(fxb) + acc_dx);
                if (!cy) gf->set(fyb, gf->get(fyb) + acc_dy);
              }
            }
          }
        }
      },
      x, flow);
  return out;
}

// --------------------------------------------------------- resize (bilin)

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  const bool flat = x.rank() == 2;
  require(flat || x.rank() == 4,
          "resize_bilinear: input must be [H,W] or [N,C,H,W], got " + shape_str(x.shape()));
  if (out_h <= 0 || out_w <= 0) throw ValueError("resize_bilinear: non-positive output size");
  const int N = flat ? 1 : x.dim(0);
  const int C = flat ? 1 : x.dim(1);
  const int H = flat ? x.dim(0) : x.dim(2);
  const int W = flat ? x.dim(1) : x.dim(3);
  Tensor out = make_tensor(flat ? std::vector<int>{out_h, out_w}
                                : std::vector<int>{N, C, out_h, out_w});

  // align-corners mapping: src = dst * (in - 1) / (out - 1)
  const double ry = out_h > 1 ? double(H - 1) / double(out_h - 1) : 0.0;
  const double rx = out_w > 1 ? double(W - 1) / double(out_w - 1) : 0.0;

  CINESEG_DISPATCH(prec_of(x), {
    const auto* xp = x.unwrap().data.as<scalar_t>();
    auto* op = out.unwrap().data.as<scalar_t>();
    for (std::int64_t pc = 0; pc < static_cast<std::int64_t>(N) * C; ++pc) {
      const scalar_t* pl = xp + pc * H * W;
      scalar_t* ol = op + pc * static_cast<std::int64_t>(out_h) * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const double sy = oy * ry;
        const int y0 = std::min(static_cast<int>(sy), H - 1);
        const int y1 = std::min(y0 + 1, H - 1);
        const double wy = sy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
          const double sx = ox * rx;
          const int x0 = std::min(static_cast<int>(sx), W - 1);
          const int x1 = std::min(x0 + 1, W - 1);
          const double wx = sx - x0;
          const double v = (1.0 - wy) * ((1.0 - wx) * pl[y0 * W + x0] + wx * pl[y0 * W + x1]) +
                           wy * ((1.0 - wx) * pl[y1 * W + x0] + wx * pl[y1 * W + x1]);
          ol[static_cast<std::size_t>(oy) * out_w + ox] = static_cast<scalar_t>(v);
        }
      }
    }
  });
  record_if(
      out,
      [x, out, N, C, H, W, out_h, out_w, ry, rx]() {
        if (!x.requires_grad()) return;
        Buffer& gx = ensure_grad(x.unwrap());
        const Buffer& g = *out.unwrap().grad;
        for (std::int64_t pc = 0; pc < static_cast<std::int64_t>(N) * C; ++pc) {
          const std::size_t ib = static_cast<std::size_t>(pc) * H * W;
          const std::size_t ob = static_cast<std::size_t>(pc) * out_h * out_w;
          for (int oy = 0; oy < out_h; ++oy) {
            const double sy = oy * ry;
            const int y0 = std::min(static_cast<int>(sy), H - 1);
            const int y1 = std::min(y0 + 1, H - 1);
            const double wy = sy - y0;
            for (int ox = 0; ox < out_w; ++ox) {
              const double sx = ox * rx;
              const int x0 = std::min(static_cast<int>(sx), W - 1);
              const int x1 = std::min(x0 + 1, W - 1);
              const double wx = sx - x0;
              const double gv = g.get(ob + static_cast<std::size_t>(oy) * out_w + ox);
              gx.set(ib + y0 * W + x0, gx.get(ib + y0 * W + x0) + gv * (1.0 - wy) * (1.0 - wx));
              gx.set(ib + y0 * W + x1, gx.get(ib + y0 * W + x1) + gv * (1.0 - wy) * wx);
              gx.set(ib + y1 * W + x0, gx.get(ib + y1 * W + x0) + gv * wy * (1.0 - wx));
              gx.set(ib + y1 * W + x1, gx.get(ib + y1 * W + x1) + gv * wy * wx);
            }
          }
        }
      },
      x);
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

}  // namespace cineseg
