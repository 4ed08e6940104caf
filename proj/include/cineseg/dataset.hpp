#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"

#include "cineseg/augment.hpp"
#include "cineseg/phantom.hpp"
#include "cineseg/rng.hpp"

namespace cineseg {

// On-disk case layout, one directory per case:
//   case_<id>/cine.tns      [T,H,W]
//   case_<id>/myo_ed.tns    [H,W]
//   case_<id>/scar_ed.tns   [H,W]
//   case_<id>/flow_gt.tns   [T-1,2,H,W]
//   case_<id>/meta.json     (id, seed, resolved config, config hash)

// Per-case geometry jitter for dataset generation. Identical configs across
// cases would make every mask equal and segmentation trivial, so the
// generator varies the anatomy within these bounds.
struct PhantomJitter {
  double center = 3.0;        // +- pixels on the annulus center
  double radius = 1.5;        // +- pixels on both radii
  double amp_frac = 0.2;      // relative jitter on both contraction amplitudes
  bool rotate_sector = true;  // scar sector orientation uniform in [0, 2pi)
  double width_frac = 0.2;    // relative jitter on the sector width
};

PhantomConfig jitter_phantom_config(const PhantomConfig& base, const PhantomJitter& jitter,
                                    Rng& rng);

void save_case(const std::filesystem::path& case_dir, const PhantomCase& c,
               const nlohmann::json& meta);

struct LoadedCase {
  Tensor frames;
  std::vector<Tensor> gt_flows;  // empty if flow_gt.tns is absent
  Tensor myo_mask;
  Tensor scar_mask;
  nlohmann::json meta;
};

LoadedCase load_case(const std::filesystem::path& case_dir);

CineSample to_sample(const LoadedCase& c, bool with_gt_flows = false);

// Generates `cases` jittered cases under out_dir; case i's phantom seed and
// geometry derive from derive_seed(seed, "phantom-case", i). Byte-identical
// for identical inputs.
void generate_dataset(const PhantomConfig& base, const PhantomJitter& jitter, int cases,
                      std::uint64_t seed, const std::filesystem::path& out_dir);

// Sorted case_* subdirectories of a dataset root.
std::vector<std::filesystem::path> list_case_dirs(const std::filesystem::path& root);

nlohmann::json phantom_config_to_json(const PhantomConfig& cfg);

}  // namespace cineseg
