#include "cineseg/adam.hpp"

#include <cmath>

namespace cineseg {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : cfg_(cfg), params_(std::move(params)) {
  if (params_.empty()) throw ValueError("adam: no parameters");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.requires_grad()) {
      throw ValueError("adam: parameter '" + p.name() + "' does not require gradients");
    }
    m_.emplace_back(p.precision(), static_cast<std::size_t>(p.numel()), 0.0);
    v_.emplace_back(p.precision(), static_cast<std::size_t>(p.numel()), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Node& pn = params_[pi].unwrap();
    if (!pn.grad) continue;  // parameter unused in this graph
    Buffer& g = *pn.grad;
    Buffer& m = m_[pi];
    Buffer& v = v_[pi];
    CINESEG_DISPATCH(pn.data.prec, {
      auto* xp = pn.data.as<scalar_t>();
      auto* gp = g.as<scalar_t>();
      auto* mp = m.as<scalar_t>();
      auto* vp = v.as<scalar_t>();
      const std::int64_t n = pn.numel();
      const scalar_t b1 = static_cast<scalar_t>(cfg_.beta1);
      const scalar_t b2 = static_cast<scalar_t>(cfg_.beta2);
      const scalar_t lr = static_cast<scalar_t>(cfg_.lr);
      const scalar_t eps = static_cast<scalar_t>(cfg_.eps);
      const scalar_t c1 = static_cast<scalar_t>(bc1);
      const scalar_t c2 = static_cast<scalar_t>(bc2);
      for (std::int64_t i = 0; i < n; ++i) {
        const scalar_t gv = gp[i];
        if (!std::isfinite(double(gv))) {
          throw NumericError("adam: non-finite gradient for parameter '" + pn.name + "' at index " +
                             std::to_string(i));
        }
        mp[i] = b1 * mp[i] + (scalar_t(1) - b1) * gv;
        vp[i] = b2 * vp[i] + (scalar_t(1) - b2) * gv * gv;
        const scalar_t mhat = mp[i] / c1;
        const scalar_t vhat = vp[i] / c2;
        xp[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    });
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace cineseg
