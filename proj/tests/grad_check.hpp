#pragma once

// Finite-difference gradient oracle for the autodiff suite. The oracle path
// only ever evaluates forward passes on plain (non-recorded) tensors, so it
// stays independent of the backward rules it is checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cineseg/ops.hpp"
#include "cineseg/rng.hpp"
#include "cineseg/tensor.hpp"

namespace gradcheck {

// Builds a scalar loss from the given input tensors. The same builder is used
// for the autodiff pass and for every finite-difference evaluation.
using LossBuilder = std::function<cineseg::Tensor(const std::vector<cineseg::Tensor>&)>;

struct Result {
  double max_rel_err = 0.0;
  int checked_elements = 0;
};

inline double rel_err(double a, double b, double floor = 1e-6) {
  const double denom = std::max({floor, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

// Compares the tape gradient of builder(...) against central differences
// (step h) for every element of every input. 64-bit mode is assumed.
inline Result check(const LossBuilder& builder,
                    const std::vector<std::vector<int>>& shapes,
                    const std::vector<std::vector<double>>& values, double h = 1e-5) {
  using cineseg::GradTape;
  using cineseg::Tensor;

  // autodiff gradients
  std::vector<Tensor> inputs;
  inputs.reserve(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    inputs.push_back(Tensor::from_vector(shapes[i], values[i]).set_requires_grad(true));
  }
  std::vector<std::vector<double>> ad_grads;
  {
    GradTape tape;
    Tensor loss = builder(inputs);
    tape.backward(loss);
    for (Tensor& t : inputs) {
      ad_grads.push_back(t.has_grad() ? t.grad_vector()
                                      : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0));
    }
  }

  // central differences
  Result r;
  auto eval = [&](const std::vector<std::vector<double>>& vals) {
    std::vector<Tensor> plain;
    plain.reserve(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      plain.push_back(Tensor::from_vector(shapes[i], vals[i]));
    }
    return builder(plain).item();
  };
  std::vector<std::vector<double>> work = values;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    for (std::size_t j = 0; j < work[i].size(); ++j) {
      const double saved = work[i][j];
      work[i][j] = saved + h;
      const double fp = eval(work);
      work[i][j] = saved - h;
      const double fm = eval(work);
      work[i][j] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      r.max_rel_err = std::max(r.max_rel_err, rel_err(ad_grads[i][j], fd));
      ++r.checked_elements;
    }
  }
  return r;
}

// Random values in [lo, hi], pushed away from zero by `kink_margin` when
// nonzero (for relu/abs-style kinks).
inline std::vector<double> random_values(cineseg::Rng& rng, std::int64_t n, double lo, double hi,
                                         double kink_margin = 0.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) {
    x = rng.uniform(lo, hi);
    if (kink_margin > 0.0 && std::fabs(x) < kink_margin) {
      x = x >= 0 ? x + kink_margin : x - kink_margin;
    }
  }
  return v;
}

// Scalarizes a tensor with fixed random weights so reductions do not wash
// out elementwise sign errors.
inline cineseg::Tensor weighted_sum(const cineseg::Tensor& t, const cineseg::Tensor& weights) {
  return cineseg::sum(cineseg::mul(t, weights));
}

inline cineseg::Tensor random_weights(cineseg::Rng& rng, const std::vector<int>& shape) {
  std::vector<double> v(static_cast<std::size_t>(cineseg::shape_numel(shape)));
  for (auto& x : v) {
    const double m = 0.5 + rng.uniform();
    x = rng.bernoulli(0.5) ? m : -m;
  }
  return cineseg::Tensor::from_vector(shape, v);
}

}  // namespace gradcheck
