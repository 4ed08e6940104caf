#include "cineseg/augment.hpp"

#include <cmath>

namespace cineseg {

namespace {

constexpr double kMaxAngle = 30.0 * 3.14159265358979323846 / 180.0;

using Grid = std::vector<double>;

Grid flip_h(const Grid& in, int h, int w) {
  Grid out(in.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out[static_cast<std::size_t>(y) * w + x] = in[static_cast<std::size_t>(y) * w + (w - 1 - x)];
    }
  }
  return out;
}

Grid flip_v(const Grid& in, int h, int w) {
  Grid out(in.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out[static_cast<std::size_t>(y) * w + x] = in[static_cast<std::size_t>(h - 1 - y) * w + x];
    }
  }
  return out;
}

double sample_clamped(const Grid& img, int h, int w, double sy, double sx) {
  sx = std::min(std::max(sx, 0.0), double(w - 1));
  sy = std::min(std::max(sy, 0.0), double(h - 1));
  const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double wx = sx - x0, wy = sy - y0;
  return (1 - wy) * ((1 - wx) * img[static_cast<std::size_t>(y0) * w + x0] +
                     wx * img[static_cast<std::size_t>(y0) * w + x1]) +
         wy * ((1 - wx) * img[static_cast<std::size_t>(y1) * w + x0] +
               wx * img[static_cast<std::size_t>(y1) * w + x1]);
}

// output(p) = input(R_{-angle}(p - c) + c), bilinear with border clamp
Grid rotate(const Grid& in, int h, int w, double angle) {
  Grid out(in.size());
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = ca * dx + sa * dy + cx;   // inverse rotation
      const double sy = -sa * dx + ca * dy + cy;
      out[static_cast<std::size_t>(y) * w + x] = sample_clamped(in, h, w, sy, sx);
    }
  }
  return out;
}

Grid blur(const Grid& in, int h, int w, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= norm;

  Grid tmp(in.size()), out(in.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int xs = std::min(std::max(x + i, 0), w - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * in[static_cast<std::size_t>(y) * w + xs];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int ys = std::min(std::max(y + i, 0), h - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(ys) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

Grid spatial(const Grid& g, int h, int w, const AugmentDraw& d) {
  Grid out = g;
  if (d.hflip) out = flip_h(out, h, w);
  if (d.vflip) out = flip_v(out, h, w);
  if (d.angle != 0.0) out = rotate(out, h, w, d.angle);
  return out;
}

Grid binarize(Grid g) {
  for (auto& v : g) v = v >= 0.5 ? 1.0 : 0.0;
  return g;
}

}  // namespace

AugmentDraw sample_augment_draw(Rng& rng) {
  AugmentDraw d;
  d.hflip = rng.bernoulli(0.5);
  d.vflip = rng.bernoulli(0.5);
  d.angle = rng.uniform(-kMaxAngle, kMaxAngle);
  d.blur_sigma = rng.uniform(0.0, 1.0);
  return d;
}

CineSample augment_sample(const CineSample& sample, const AugmentDraw& draw) {
  if (sample.frames.rank() != 3) {
    throw ShapeError("augment: frames must be [T,H,W], got " + shape_str(sample.frames.shape()));
  }
  const int t_count = sample.frames.dim(0);
  const int h = sample.frames.dim(1), w = sample.frames.dim(2);

  CineSample out;
  {
    const auto all = sample.frames.to_vector();
    std::vector<double> stacked;
    stacked.reserve(all.size());
    for (int t = 0; t < t_count; ++t) {
      Grid fr(all.begin() + static_cast<std::ptrdiff_t>(t) * h * w,
              all.begin() + static_cast<std::ptrdiff_t>(t + 1) * h * w);
      fr = spatial(fr, h, w, draw);
      fr = blur(fr, h, w, draw.blur_sigma);
      stacked.insert(stacked.end(), fr.begin(), fr.end());
    }
    out.frames = Tensor::from_vector({t_count, h, w}, stacked);
  }

  for (const Tensor& flow : sample.flows) {
    if (flow.shape() != std::vector<int>{2, h, w}) {
      throw ShapeError("augment: flow " + shape_str(flow.shape()) + " does not match frames");
    }
    const auto fv = flow.to_vector();
    Grid fx(fv.begin(), fv.begin() + static_cast<std::ptrdiff_t>(h) * w);
    Grid fy(fv.begin() + static_cast<std::ptrdiff_t>(h) * w, fv.end());
    fx = spatial(fx, h, w, draw);
    fy = spatial(fy, h, w, draw);
    // vector part: flips negate the mirrored component, rotation rotates
    if (draw.hflip) {
      for (auto& v : fx) v = -v;
    }
    if (draw.vflip) {
      for (auto& v : fy) v = -v;
    }
    if (draw.angle != 0.0) {
      const double ca = std::cos(draw.angle), sa = std::sin(draw.angle);
      for (std::size_t i = 0; i < fx.size(); ++i) {
        const double vx = fx[i], vy = fy[i];
        fx[i] = ca * vx - sa * vy;
        fy[i] = sa * vx + ca * vy;
      }
    }
    std::vector<double> joined = fx;
    joined.insert(joined.end(), fy.begin(), fy.end());
    out.flows.push_back(Tensor::from_vector({2, h, w}, joined));
  }

  for (auto [src, dst] : {std::pair{&sample.myo_mask, &out.myo_mask},
                          std::pair{&sample.scar_mask, &out.scar_mask}}) {
    if (!src->defined()) continue;
    Grid m = spatial(src->to_vector(), h, w, draw);
    if (draw.angle != 0.0) m = binarize(std::move(m));
    *dst = Tensor::from_vector({h, w}, m);
  }
  return out;
}

CineSample augment_sample(const CineSample& sample, Rng& rng) {
  return augment_sample(sample, sample_augment_draw(rng));
}

}  // namespace cineseg
