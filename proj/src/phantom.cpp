#include "cineseg/phantom.hpp"

#include <cmath>
#include <string>

#include "cineseg/imagewarp.hpp"
#include "cineseg/ops.hpp"
#include "cineseg/rng.hpp"

namespace cineseg {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;
constexpr double kSectorBand = 0.1;  // angular blend band, radians
// texture level of scar tissue at full cue: a faint offset from myocardium
constexpr double kScarLevelOffset = 0.10;

double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  return a < 0 ? a + kTwoPi : a;
}

// 1 deep inside the sector, 0 outside, linear ramp of width kSectorBand
// centered on each boundary. Signed distance d > 0 inside.
double sector_weight(double theta, double theta0, double width) {
  if (width <= 0.0) return 0.0;
  const double a = wrap_angle(theta - theta0);
  double d;
  if (a < width) {
    d = std::min(a, width - a);
  } else {
    d = -std::min(a - width, kTwoPi - a);
  }
  const double u = d / kSectorBand + 0.5;
  return u < 0.0 ? 0.0 : (u > 1.0 ? 1.0 : u);
}

double edge_ramp(double e) {  // 1-pixel linear edge
  const double u = e + 0.5;
  return u < 0.0 ? 0.0 : (u > 1.0 ? 1.0 : u);
}

}  // namespace

void PhantomConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValueError("phantom config: " + msg); };
  if (height < 8 || width < 8) fail("height and width must be at least 8");
  if (frames < 2) fail("frames must be >= 2, got " + std::to_string(frames));
  if (!(r_inner > 0)) fail("r_inner must be positive");
  if (!(r_inner < r_outer)) fail("r_inner must be below r_outer");
  if (!(r_outer < std::min(height, width) / 2.0)) {
    fail("r_outer " + std::to_string(r_outer) + " must be below min(H,W)/2");
  }
  if (!(amp_normal >= 0 && amp_normal < 1)) fail("amp_normal must lie in [0,1)");
  if (!(amp_scar >= 0 && amp_scar < 1)) fail("amp_scar must lie in [0,1)");
  if (amp_scar > amp_normal) fail("amp_scar must not exceed amp_normal");
  if (!(texture_cue >= 0 && texture_cue <= 1)) fail("texture_cue must lie in [0,1]");
  if (!(noise_sigma >= 0)) fail("noise_sigma must be nonnegative");
}

Tensor invert_flow(const Tensor& flow, int iterations) {
  // damped fixed point inv <- inv + a*(-flow(id + inv) - inv); plain Picard
  // diverges where the field's local Lipschitz constant exceeds one (the
  // sector transition bands get close)
  constexpr double kDamping = 0.35;
  const int h = flow.dim(1), w = flow.dim(2);
  Tensor f4 = reshape(flow, {1, 2, h, w});
  Tensor inv = scalar_mul(f4, -kDamping);
  for (int i = 0; i < iterations; ++i) {
    Tensor target = scalar_mul(grid_sample(f4, inv), -1.0);
    inv = add(scalar_mul(inv, 1.0 - kDamping), scalar_mul(target, kDamping));
  }
  return reshape(inv, {2, h, w});
}

PhantomCase generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  const int h = cfg.height, w = cfg.width, t_count = cfg.frames;
  const double width_ang = wrap_angle(cfg.scar_theta1 - cfg.scar_theta0);
  const double sector_width = (cfg.scar_theta1 == cfg.scar_theta0) ? 0.0 : width_ang;
  const double r_mid = 0.5 * (cfg.r_inner + cfg.r_outer);
  const double sigma_r = cfg.r_outer - cfg.r_inner;
  const double scar_level = cfg.intensity_myo + kScarLevelOffset;

  // clean reference image, masks, and the per-pixel geometry
  std::vector<double> clean(static_cast<std::size_t>(h) * w);
  std::vector<double> myo(clean.size(), 0.0), scar(clean.size(), 0.0);
  std::vector<double> amp(clean.size()), radial(clean.size());
  std::vector<double> ux(clean.size()), uy(clean.size());  // unit radial direction * r
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double dx = x - cfg.center_x;
      const double dy = y - cfg.center_y;
      const double r = std::hypot(dx, dy);
      const double theta = std::atan2(dy, dx);
      const double u = sector_weight(theta, cfg.scar_theta0, sector_width);

      const double a_outer = edge_ramp(cfg.r_outer - r);
      const double a_inner = edge_ramp(cfg.r_inner - r);
      const double cue = cfg.texture_cue * u;
      const double myo_level = cfg.intensity_myo * (1.0 - cue) + scar_level * cue;
      clean[i] = cfg.intensity_background * (1.0 - a_outer) +
                 a_outer * (cfg.intensity_blood * a_inner + myo_level * (1.0 - a_inner));

      const bool in_ring = r >= cfg.r_inner && r <= cfg.r_outer;
      myo[i] = in_ring ? 1.0 : 0.0;
      scar[i] = (in_ring && u > 0.5) ? 1.0 : 0.0;

      amp[i] = cfg.amp_normal + (cfg.amp_scar - cfg.amp_normal) * u;
      radial[i] = std::exp(-(r - r_mid) * (r - r_mid) / (2.0 * sigma_r * sigma_r));
      ux[i] = dx;  // r * cos(theta)
      uy[i] = dy;  // r * sin(theta)
    }
  }
  PhantomCase out;
  out.myo_mask = Tensor::from_vector({h, w}, myo);
  out.scar_mask = Tensor::from_vector({h, w}, scar);

  // Frame 0 carries its noise; later frames warp the NOISY reference so the
  // noise acts as tissue texture that moves with the motion (plus fresh
  // per-frame noise on top). This makes the motion observable everywhere,
  // not only at the annulus edges.
  std::vector<Tensor> frames;
  frames.reserve(static_cast<std::size_t>(t_count));
  {
    Rng noise(derive_seed(cfg.seed, "phantom-noise", 0));
    std::vector<double> f0 = clean;
    if (cfg.noise_sigma > 0) {
      for (auto& v : f0) v += noise.normal(0.0, cfg.noise_sigma);
    }
    frames.push_back(Tensor::from_vector({h, w}, f0));
  }
  const Tensor reference = frames[0];

  for (int t = 1; t < t_count; ++t) {
    const double s = std::sin(kPi * t / t_count);
    const double contraction = s * s;
    std::vector<double> fv(static_cast<std::size_t>(2) * h * w);
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const double mag = -amp[i] * contraction * radial[i];
      fv[i] = mag * ux[i];
      fv[clean.size() + i] = mag * uy[i];
    }
    Tensor gt = Tensor::from_vector({2, h, w}, fv);
    out.gt_flows.push_back(gt);

    Tensor render_flow = invert_flow(gt, 200);
    Tensor frame = warp_bilinear(reference, render_flow);
    if (cfg.noise_sigma > 0) {
      Rng noise(derive_seed(cfg.seed, "phantom-noise", static_cast<std::uint64_t>(t)));
      std::vector<double> fvals = frame.to_vector();
      for (auto& v : fvals) v += noise.normal(0.0, cfg.noise_sigma);
      frame = Tensor::from_vector({h, w}, fvals);
    }
    frames.push_back(frame);
  }

  // stack frames into [T,H,W]
  std::vector<Tensor> reshaped;
  reshaped.reserve(frames.size());
  for (Tensor& f : frames) reshaped.push_back(reshape(f, {1, h, w}));
  out.frames = concat(reshaped, 0);
  return out;
}

}  // namespace cineseg
