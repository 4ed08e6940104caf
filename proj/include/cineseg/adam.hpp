#pragma once

#include <cstdint>
#include <vector>

#include "cineseg/tensor.hpp"

namespace cineseg {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction, the published form:
//   m <- b1*m + (1-b1)*g            v <- b2*v + (1-b2)*g^2
//   x <- x - lr * m_hat / (sqrt(v_hat) + eps),  m_hat = m/(1-b1^t), v_hat = v/(1-b2^t)
// Moments live at the parameters' precision. step() consumes and zeroes the
// gradients; a parameter with a non-finite gradient raises NumericError
// naming it.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  void step();
  void zero_grad();

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<Buffer> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace cineseg
