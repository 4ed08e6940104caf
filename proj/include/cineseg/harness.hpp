#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cineseg/config.hpp"
#include "cineseg/metrics.hpp"
#include "cineseg/motion.hpp"
#include "cineseg/scarseg.hpp"

namespace cineseg {

// ------------------------------------------------------------- evaluation

struct EvalCaseRow {
  std::string case_name;
  double dice_scar = 0.0;
  double dice_myo = 0.0;
  double hd_scar = 0.0;
  bool hd_defined = false;  // Hausdorff needs both masks nonempty
};

struct EvalReport {
  std::vector<EvalCaseRow> rows;
  Aggregate dice_scar, dice_myo, hd;
  int hd_cases = 0;  // cases entering the Hausdorff aggregate
};

// pred_dir holds case_*/scar_pred.tns (+ myo_pred.tns when dual-task);
// gt_dir is a dataset root with matching case names.
EvalReport evaluate_predictions(const std::filesystem::path& pred_dir,
                                const std::filesystem::path& gt_dir, double percentile);

void write_eval_csv(const std::filesystem::path& path, const std::string& method,
                    const EvalReport& report);

// ---------------------------------------------------------------- ablate

struct MotionMethodRow {
  std::string method;   // ilk | f2f | fixed_ed
  Aggregate epe;        // per-case myocardium-mean EPE over all frames
  Aggregate epe_late;   // frames t >= T/2 only
};

struct ModeRow {
  AblationMode mode;
  EvalReport report;
};

struct AblateResult {
  std::vector<MotionMethodRow> motion_rows;
  std::vector<ModeRow> table1;             // dual-task, four modes
  EvalReport ed_only_single;               // ED_ONLY with dual_task off
  std::vector<double> motion_loss_trace;
  double motion_train_seconds = 0.0;
  double total_seconds = 0.0;
};

// The full experiment: generate train/test datasets, train the motion
// network, compare motion estimators on the held-out cases, train the
// segmentation network per ablation mode (plus the single-task reference),
// and evaluate on the held-out cases. Writes table1.csv, motion_table.csv
// and dual_task.csv into out_dir. Deterministic in the config.
AblateResult run_ablate(const RunConfig& cfg, bool verbose = true);

void write_ablate_csvs(const std::filesystem::path& out_dir, const AblateResult& result);

// Shared helpers for the CLI.
std::vector<Tensor> estimate_case_flows(const std::string& method, const RunConfig& cfg,
                                        const MotionModel* model, const Tensor& seq);

std::string format_csv_number(double v);  // fixed 4 decimals, nan-safe

}  // namespace cineseg
