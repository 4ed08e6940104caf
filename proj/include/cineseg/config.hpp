#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "cineseg/dataset.hpp"
#include "cineseg/motion.hpp"
#include "cineseg/phantom.hpp"
#include "cineseg/scarseg.hpp"

namespace cineseg {

// One JSON document drives every stage. Unknown keys are rejected; absent
// keys take the documented defaults. Subsystem random streams all derive
// from the single top-level seed.
struct RunConfig {
  std::uint64_t seed = 1;

  PhantomConfig phantom;  // phantom.seed is derived per case, not configured
  PhantomJitter jitter;

  struct Motion {
    std::string method = "unet";  // unet | varreg | f2f | ilk
    MotionTrainConfig train;
    VarRegConfig varreg;
    IlkConfig ilk;
  } motion;

  struct Seg {
    AblationMode mode = AblationMode::of_plus_all;
    SegTrainConfig train;
  } seg;

  struct Eval {
    double percentile = 95.0;
  } eval;

  struct Io {
    std::string dataset_dir = "data";
    std::string out_dir = "out";
  } io;

  struct Ablate {
    int train_cases = 20;
    int test_cases = 8;
  } ablate;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);  // fully resolved

}  // namespace cineseg
