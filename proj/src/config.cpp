#include "cineseg/config.hpp"

#include <fstream>
#include <set>

namespace cineseg {

using nlohmann::json;

namespace {

// strict field extraction: every present key must be consumed
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ValueError("config section '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValueError("config: bad value for '" + name_ + "." + key + "'");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() != exceptions_at_entry_) return;  // already unwinding
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ValueError("config: unknown key '" + name_ + "." + it.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
  int exceptions_at_entry_ = std::uncaught_exceptions();
};

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  Section root(j, "<root>");
  root.get("seed", cfg.seed);

  if (const json* p = root.sub("phantom")) {
    Section s(*p, "phantom");
    s.get("height", cfg.phantom.height);
    s.get("width", cfg.phantom.width);
    s.get("frames", cfg.phantom.frames);
    s.get("center_x", cfg.phantom.center_x);
    s.get("center_y", cfg.phantom.center_y);
    s.get("r_inner", cfg.phantom.r_inner);
    s.get("r_outer", cfg.phantom.r_outer);
    s.get("amp_normal", cfg.phantom.amp_normal);
    s.get("amp_scar", cfg.phantom.amp_scar);
    s.get("scar_theta0", cfg.phantom.scar_theta0);
    s.get("scar_theta1", cfg.phantom.scar_theta1);
    s.get("intensity_background", cfg.phantom.intensity_background);
    s.get("intensity_blood", cfg.phantom.intensity_blood);
    s.get("intensity_myo", cfg.phantom.intensity_myo);
    s.get("texture_cue", cfg.phantom.texture_cue);
    s.get("noise_sigma", cfg.phantom.noise_sigma);
    if (const json* q = s.sub("jitter")) {
      Section js(*q, "phantom.jitter");
      js.get("center", cfg.jitter.center);
      js.get("radius", cfg.jitter.radius);
      js.get("amp_frac", cfg.jitter.amp_frac);
      js.get("rotate_sector", cfg.jitter.rotate_sector);
      js.get("width_frac", cfg.jitter.width_frac);
    }
  }

  if (const json* p = root.sub("motion")) {
    Section s(*p, "motion");
    s.get("method", cfg.motion.method);
    s.get("epochs", cfg.motion.train.epochs);
    s.get("batch_size", cfg.motion.train.batch_size);
    s.get("lr", cfg.motion.train.lr);
    s.get("lambda_smooth", cfg.motion.train.lambda_smooth);
    s.get("depth", cfg.motion.train.depth);
    s.get("base_channels", cfg.motion.train.base_channels);
    if (const json* q = s.sub("varreg")) {
      Section vs(*q, "motion.varreg");
      vs.get("lambda_smooth", cfg.motion.varreg.lambda_smooth);
      vs.get("iters", cfg.motion.varreg.iters);
      vs.get("lr", cfg.motion.varreg.lr);
      vs.get("levels", cfg.motion.varreg.levels);
    }
    if (const json* q = s.sub("ilk")) {
      Section is(*q, "motion.ilk");
      is.get("window", cfg.motion.ilk.window);
      is.get("levels", cfg.motion.ilk.levels);
      is.get("iters", cfg.motion.ilk.iters);
    }
    static const std::set<std::string> kMethods{"unet", "varreg", "f2f", "ilk"};
    if (!kMethods.count(cfg.motion.method)) {
      throw ValueError("config: motion.method must be unet|varreg|f2f|ilk, got '" +
                       cfg.motion.method + "'");
    }
  }

  if (const json* p = root.sub("seg")) {
    Section s(*p, "seg");
    std::string mode = ablation_mode_name(cfg.seg.mode);
    s.get("mode", mode);
    cfg.seg.mode = ablation_mode_from_name(mode);
    s.get("dual_task", cfg.seg.train.dual_task);
    s.get("epochs", cfg.seg.train.epochs);
    s.get("batch_size", cfg.seg.train.batch_size);
    s.get("lr", cfg.seg.train.lr);
    s.get("max_disp", cfg.seg.train.max_disp);
    s.get("augment", cfg.seg.train.augment);
    s.get("depth", cfg.seg.train.depth);
    s.get("base_channels", cfg.seg.train.base_channels);
  }

  if (const json* p = root.sub("eval")) {
    Section s(*p, "eval");
    s.get("percentile", cfg.eval.percentile);
  }

  if (const json* p = root.sub("io")) {
    Section s(*p, "io");
    s.get("dataset_dir", cfg.io.dataset_dir);
    s.get("out_dir", cfg.io.out_dir);
  }

  if (const json* p = root.sub("ablate")) {
    Section s(*p, "ablate");
    s.get("train_cases", cfg.ablate.train_cases);
    s.get("test_cases", cfg.ablate.test_cases);
  }

  cfg.phantom.validate();
  cfg.motion.train.validate();
  cfg.seg.train.validate();
  if (cfg.eval.percentile <= 0 || cfg.eval.percentile > 100) {
    throw ValueError("config: eval.percentile must lie in (0, 100]");
  }
  if (cfg.ablate.train_cases < 1 || cfg.ablate.test_cases < 1) {
    throw ValueError("config: ablate case counts must be positive");
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open config: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValueError("config: invalid JSON in " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

json run_config_to_json(const RunConfig& cfg) {
  json phantom = phantom_config_to_json(cfg.phantom);
  phantom.erase("seed");
  phantom["jitter"] = {{"center", cfg.jitter.center},
                       {"radius", cfg.jitter.radius},
                       {"amp_frac", cfg.jitter.amp_frac},
                       {"rotate_sector", cfg.jitter.rotate_sector},
                       {"width_frac", cfg.jitter.width_frac}};
  return json{
      {"seed", cfg.seed},
      {"phantom", phantom},
      {"motion",
       {{"method", cfg.motion.method},
        {"epochs", cfg.motion.train.epochs},
        {"batch_size", cfg.motion.train.batch_size},
        {"lr", cfg.motion.train.lr},
        {"lambda_smooth", cfg.motion.train.lambda_smooth},
        {"depth", cfg.motion.train.depth},
        {"base_channels", cfg.motion.train.base_channels},
        {"varreg",
         {{"lambda_smooth", cfg.motion.varreg.lambda_smooth},
          {"iters", cfg.motion.varreg.iters},
          {"lr", cfg.motion.varreg.lr},
          {"levels", cfg.motion.varreg.levels}}},
        {"ilk",
         {{"window", cfg.motion.ilk.window},
          {"levels", cfg.motion.ilk.levels},
          {"iters", cfg.motion.ilk.iters}}}}},
      {"seg",
       {{"mode", ablation_mode_name(cfg.seg.mode)},
        {"dual_task", cfg.seg.train.dual_task},
        {"epochs", cfg.seg.train.epochs},
        {"batch_size", cfg.seg.train.batch_size},
        {"lr", cfg.seg.train.lr},
        {"max_disp", cfg.seg.train.max_disp},
        {"augment", cfg.seg.train.augment},
        {"depth", cfg.seg.train.depth},
        {"base_channels", cfg.seg.train.base_channels}}},
      {"eval", {{"percentile", cfg.eval.percentile}}},
      {"io", {{"dataset_dir", cfg.io.dataset_dir}, {"out_dir", cfg.io.out_dir}}},
      {"ablate", {{"train_cases", cfg.ablate.train_cases}, {"test_cases", cfg.ablate.test_cases}}}};
}

}  // namespace cineseg
