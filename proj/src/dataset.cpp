#include "cineseg/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "cineseg/ops.hpp"
#include "cineseg/tensorfile.hpp"

namespace cineseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

PhantomConfig jitter_phantom_config(const PhantomConfig& base, const PhantomJitter& jitter,
                                    Rng& rng) {
  PhantomConfig c = base;
  c.center_x = base.center_x + rng.uniform(-jitter.center, jitter.center);
  c.center_y = base.center_y + rng.uniform(-jitter.center, jitter.center);
  c.r_inner = base.r_inner + rng.uniform(-jitter.radius, jitter.radius);
  c.r_outer = base.r_outer + rng.uniform(-jitter.radius, jitter.radius);
  c.amp_normal = base.amp_normal * (1.0 + rng.uniform(-jitter.amp_frac, jitter.amp_frac));
  c.amp_scar = base.amp_scar * (1.0 + rng.uniform(-jitter.amp_frac, jitter.amp_frac));
  const double base_width = base.scar_theta1 - base.scar_theta0;
  const double width = base_width * (1.0 + rng.uniform(-jitter.width_frac, jitter.width_frac));
  const double theta0 = jitter.rotate_sector ? rng.uniform(0.0, kTwoPi) : base.scar_theta0;
  c.scar_theta0 = theta0;
  c.scar_theta1 = theta0 + width;
  return c;
}

json phantom_config_to_json(const PhantomConfig& cfg) {
  return json{{"height", cfg.height},
              {"width", cfg.width},
              {"frames", cfg.frames},
              {"center_x", cfg.center_x},
              {"center_y", cfg.center_y},
              {"r_inner", cfg.r_inner},
              {"r_outer", cfg.r_outer},
              {"amp_normal", cfg.amp_normal},
              {"amp_scar", cfg.amp_scar},
              {"scar_theta0", cfg.scar_theta0},
              {"scar_theta1", cfg.scar_theta1},
              {"intensity_background", cfg.intensity_background},
              {"intensity_blood", cfg.intensity_blood},
              {"intensity_myo", cfg.intensity_myo},
              {"texture_cue", cfg.texture_cue},
              {"noise_sigma", cfg.noise_sigma},
              {"seed", cfg.seed}};
}

void save_case(const fs::path& case_dir, const PhantomCase& c, const json& meta) {
  fs::create_directories(case_dir);
  write_tensor_file(case_dir / "cine.tns", c.frames);
  write_tensor_file(case_dir / "myo_ed.tns", c.myo_mask);
  write_tensor_file(case_dir / "scar_ed.tns", c.scar_mask);
  if (!c.gt_flows.empty()) {
    const int h = c.gt_flows[0].dim(1), w = c.gt_flows[0].dim(2);
    std::vector<Tensor> slabs;
    slabs.reserve(c.gt_flows.size());
    for (const Tensor& f : c.gt_flows) slabs.push_back(reshape(f, {1, 2, h, w}));
    write_tensor_file(case_dir / "flow_gt.tns", concat(slabs, 0));
  }
  std::ofstream meta_out(case_dir / "meta.json", std::ios::trunc);
  if (!meta_out) throw ValueError("cannot write " + (case_dir / "meta.json").string());
  meta_out << meta.dump(2) << "\n";
}

LoadedCase load_case(const fs::path& case_dir) {
  LoadedCase c;
  c.frames = read_tensor_file(case_dir / "cine.tns");
  c.myo_mask = read_tensor_file(case_dir / "myo_ed.tns");
  c.scar_mask = read_tensor_file(case_dir / "scar_ed.tns");
  if (c.frames.rank() != 3) {
    throw ValueError("cine.tns must be [T,H,W] in " + case_dir.string());
  }
  const int h = c.frames.dim(1), w = c.frames.dim(2);
  if (c.myo_mask.shape() != std::vector<int>{h, w} || c.scar_mask.shape() != std::vector<int>{h, w}) {
    throw ValueError("mask shapes do not match the cine stack in " + case_dir.string());
  }
  if (fs::exists(case_dir / "flow_gt.tns")) {
    Tensor all = read_tensor_file(case_dir / "flow_gt.tns");
    if (all.rank() != 4 || all.dim(0) != c.frames.dim(0) - 1 || all.dim(1) != 2 ||
        all.dim(2) != h || all.dim(3) != w) {
      throw ValueError("flow_gt.tns shape " + shape_str(all.shape()) + " is inconsistent in " +
                       case_dir.string());
    }
    for (int t = 0; t < all.dim(0); ++t) {
      c.gt_flows.push_back(reshape(slice(all, 0, t, 1), {2, h, w}));
    }
  }
  if (fs::exists(case_dir / "meta.json")) {
    std::ifstream in(case_dir / "meta.json");
    in >> c.meta;
  }
  return c;
}

CineSample to_sample(const LoadedCase& c, bool with_gt_flows) {
  CineSample s;
  s.frames = c.frames;
  s.myo_mask = c.myo_mask;
  s.scar_mask = c.scar_mask;
  if (with_gt_flows) s.flows = c.gt_flows;
  return s;
}

void generate_dataset(const PhantomConfig& base, const PhantomJitter& jitter, int cases,
                      std::uint64_t seed, const fs::path& out_dir) {
  if (cases <= 0) throw ValueError("generate_dataset: case count must be positive");
  fs::create_directories(out_dir);
  for (int i = 0; i < cases; ++i) {
    Rng rng(derive_seed(seed, "phantom-case", static_cast<std::uint64_t>(i)));
    PhantomConfig cfg = jitter_phantom_config(base, jitter, rng);
    cfg.seed = rng.next_u64();
    PhantomCase pc = generate_phantom(cfg);

    json cfg_json = phantom_config_to_json(cfg);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(cfg_json.dump())));
    json meta{{"case", i}, {"seed", cfg.seed}, {"config", cfg_json}, {"config_hash", hash}};

    char name[16];
    std::snprintf(name, sizeof name, "case_%03d", i);
    save_case(out_dir / name, pc, meta);
  }
}

std::vector<fs::path> list_case_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw ValueError("not a dataset directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("case_", 0) == 0) {
      dirs.push_back(e.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace cineseg
