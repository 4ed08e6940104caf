#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cineseg/tensor.hpp"

namespace cineseg {

enum class FinalActivation { none, sigmoid };
enum class HeadInit { he, zero };

// 2D U-Net. Encoder level k carries base_channels * 2^k channels; spatial
// dims of any input must be divisible by 2^depth.
struct UNetSpec {
  int in_channels = 1;
  int out_channels = 1;
  int depth = 3;
  int base_channels = 16;
  FinalActivation final_activation = FinalActivation::none;
  HeadInit head_init = HeadInit::he;
};

struct ConvLayer {
  Tensor weight;  // [OC,IC,KH,KW]
  Tensor bias;    // [OC]
};

class UNet {
 public:
  UNet() = default;

  // He-uniform init (weights U(-sqrt(6/fan_in), +)), zero biases; the head
  // is zeroed when spec.head_init == zero. Same seed, same parameters.
  static UNet build(const UNetSpec& spec, std::uint64_t seed);

  // batch: [N, in_channels, H, W] -> [N, out_channels, H, W]
  Tensor forward(const Tensor& batch) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::int64_t parameter_count() const;
  const UNetSpec& spec() const { return spec_; }
  bool defined() const { return !enc_.empty(); }

 private:
  UNetSpec spec_;
  std::vector<std::array<ConvLayer, 2>> enc_;   // per level
  std::array<ConvLayer, 2> bottleneck_;
  std::vector<ConvLayer> dec_up_;               // upsample conv, deepest first
  std::vector<std::array<ConvLayer, 2>> dec_;   // post-concat convs, deepest first
  ConvLayer head_;
};

}  // namespace cineseg
