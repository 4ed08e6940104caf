#include "cineseg/unet.hpp"

#include <cmath>

#include "cineseg/ops.hpp"
#include "cineseg/rng.hpp"

namespace cineseg {

namespace {

ConvLayer make_conv(Rng& rng, int in_ch, int out_ch, int k, bool zero_init, const std::string& name) {
  const std::int64_t wn = static_cast<std::int64_t>(out_ch) * in_ch * k * k;
  std::vector<double> wv(static_cast<std::size_t>(wn), 0.0);
  if (!zero_init) {
    const double limit = std::sqrt(6.0 / (static_cast<double>(in_ch) * k * k));
    for (auto& v : wv) v = rng.uniform(-limit, limit);
  }
  ConvLayer layer;
  layer.weight = Tensor::from_vector({out_ch, in_ch, k, k}, wv);
  layer.weight.set_requires_grad(true).set_name(name + ".w");
  layer.bias = Tensor::zeros({out_ch});
  layer.bias.set_requires_grad(true).set_name(name + ".b");
  return layer;
}

Tensor conv_relu(const ConvLayer& l, const Tensor& x) {
  return relu(conv2d(x, l.weight, l.bias, 1, l.weight.dim(2) / 2));
}

Tensor conv_plain(const ConvLayer& l, const Tensor& x) {
  return conv2d(x, l.weight, l.bias, 1, l.weight.dim(2) / 2);
}

}  // namespace

UNet UNet::build(const UNetSpec& spec, std::uint64_t seed) {
  if (spec.depth < 1) throw ValueError("unet: depth must be >= 1");
  if (spec.in_channels < 1 || spec.out_channels < 1 || spec.base_channels < 1) {
    throw ValueError("unet: channel counts must be positive");
  }
  Rng rng(seed);
  UNet net;
  net.spec_ = spec;
  auto ch = [&](int level) { return spec.base_channels << level; };

  for (int k = 0; k < spec.depth; ++k) {
    const int in0 = (k == 0) ? spec.in_channels : ch(k - 1);
    net.enc_.push_back({make_conv(rng, in0, ch(k), 3, false, "enc" + std::to_string(k) + ".c0"),
                        make_conv(rng, ch(k), ch(k), 3, false, "enc" + std::to_string(k) + ".c1")});
  }
  net.bottleneck_ = {make_conv(rng, ch(spec.depth - 1), ch(spec.depth), 3, false, "bott.c0"),
                     make_conv(rng, ch(spec.depth), ch(spec.depth), 3, false, "bott.c1")};
  for (int k = spec.depth - 1; k >= 0; --k) {
    net.dec_up_.push_back(make_conv(rng, ch(k + 1), ch(k), 3, false, "dec" + std::to_string(k) + ".up"));
    net.dec_.push_back({make_conv(rng, 2 * ch(k), ch(k), 3, false, "dec" + std::to_string(k) + ".c0"),
                        make_conv(rng, ch(k), ch(k), 3, false, "dec" + std::to_string(k) + ".c1")});
  }
  net.head_ = make_conv(rng, ch(0), spec.out_channels, 1, spec.head_init == HeadInit::zero, "head");
  return net;
}

Tensor UNet::forward(const Tensor& batch) const {
  if (!defined()) throw ValueError("unet: forward on an unbuilt model");
  if (batch.rank() != 4) {
    throw ShapeError("unet: input must be [N,C,H,W], got " + shape_str(batch.shape()));
  }
  if (batch.dim(1) != spec_.in_channels) {
    throw ShapeError("unet: expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                     std::to_string(batch.dim(1)));
  }
  const int div = 1 << spec_.depth;
  for (int axis : {2, 3}) {
    if (batch.dim(axis) % div != 0) {
      throw ShapeError("unet: spatial extent " + std::to_string(batch.dim(axis)) +
                       " not divisible by 2^depth = " + std::to_string(div));
    }
  }

  Tensor x = batch;
  std::vector<Tensor> skips;
  skips.reserve(static_cast<std::size_t>(spec_.depth));
  for (int k = 0; k < spec_.depth; ++k) {
    x = conv_relu(enc_[static_cast<std::size_t>(k)][0], x);
    x = conv_relu(enc_[static_cast<std::size_t>(k)][1], x);
    skips.push_back(x);
    x = maxpool2(x);
  }
  x = conv_relu(bottleneck_[0], x);
  x = conv_relu(bottleneck_[1], x);
  for (int i = 0; i < spec_.depth; ++i) {
    const int k = spec_.depth - 1 - i;
    x = upsample_nearest2(x);
    x = conv_plain(dec_up_[static_cast<std::size_t>(i)], x);
    x = concat({x, skips[static_cast<std::size_t>(k)]}, 1);
    x = conv_relu(dec_[static_cast<std::size_t>(i)][0], x);
    x = conv_relu(dec_[static_cast<std::size_t>(i)][1], x);
  }
  x = conv_plain(head_, x);
  if (spec_.final_activation == FinalActivation::sigmoid) x = sigmoid(x);
  return x;
}

std::vector<Tensor> UNet::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor>> UNet::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push = [&](const ConvLayer& l) {
    out.emplace_back(l.weight.name(), l.weight);
    out.emplace_back(l.bias.name(), l.bias);
  };
  for (const auto& lvl : enc_) {
    push(lvl[0]);
    push(lvl[1]);
  }
  push(bottleneck_[0]);
  push(bottleneck_[1]);
  for (std::size_t i = 0; i < dec_up_.size(); ++i) {
    push(dec_up_[i]);
    push(dec_[i][0]);
    push(dec_[i][1]);
  }
  push(head_);
  return out;
}

std::int64_t UNet::parameter_count() const {
  std::int64_t n = 0;
  for (const Tensor& p : parameters()) n += p.numel();
  return n;
}

}  // namespace cineseg
