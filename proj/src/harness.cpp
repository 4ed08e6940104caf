#include "cineseg/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cineseg/dataset.hpp"
#include "cineseg/ops.hpp"
#include "cineseg/rng.hpp"
#include "cineseg/tensorfile.hpp"

namespace cineseg {

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void log_line(bool verbose, const std::string& msg) {
  if (verbose) std::fprintf(stderr, "[ablate] %s\n", msg.c_str());
}

Aggregate aggregate_or_zero(const std::vector<double>& v) {
  return v.empty() ? Aggregate{} : aggregate(v);
}

}  // namespace

std::string format_csv_number(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

EvalReport evaluate_predictions(const fs::path& pred_dir, const fs::path& gt_dir,
                                double percentile) {
  EvalReport report;
  std::vector<double> ds, dm, hd;
  for (const fs::path& gt_case : list_case_dirs(gt_dir)) {
    const std::string name = gt_case.filename().string();
    const fs::path pred_case = pred_dir / name;
    if (!fs::exists(pred_case / "scar_pred.tns")) {
      throw ValueError("missing prediction for " + name + " under " + pred_dir.string());
    }
    LoadedCase gt = load_case(gt_case);
    Tensor scar_pred = read_tensor_file(pred_case / "scar_pred.tns");

    EvalCaseRow row;
    row.case_name = name;
    row.dice_scar = dice_score(scar_pred, gt.scar_mask);
    ds.push_back(row.dice_scar);
    if (fs::exists(pred_case / "myo_pred.tns")) {
      Tensor myo_pred = read_tensor_file(pred_case / "myo_pred.tns");
      row.dice_myo = dice_score(myo_pred, gt.myo_mask);
      dm.push_back(row.dice_myo);
    }
    try {
      row.hd_scar = hausdorff(scar_pred, gt.scar_mask, percentile);
      row.hd_defined = true;
      hd.push_back(row.hd_scar);
    } catch (const ValueError&) {
      row.hd_defined = false;  // empty mask: Hausdorff undefined for this case
    }
    report.rows.push_back(row);
  }
  if (report.rows.empty()) throw ValueError("no cases found under " + gt_dir.string());
  report.dice_scar = aggregate_or_zero(ds);
  report.dice_myo = aggregate_or_zero(dm);
  report.hd = hd.empty() ? Aggregate{std::nan(""), std::nan("")} : aggregate(hd);
  report.hd_cases = static_cast<int>(hd.size());
  return report;
}

void write_eval_csv(const fs::path& path, const std::string& method, const EvalReport& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValueError("cannot write " + path.string());
  out << "method,dice_scar_mean,dice_scar_sd,dice_myo_mean,dice_myo_sd,hd95_mean,hd95_sd\n";
  out << method << ',' << format_csv_number(r.dice_scar.mean) << ','
      << format_csv_number(r.dice_scar.sd) << ',' << format_csv_number(r.dice_myo.mean) << ','
      << format_csv_number(r.dice_myo.sd) << ',' << format_csv_number(r.hd.mean) << ','
      << format_csv_number(r.hd.sd) << '\n';
}

std::vector<Tensor> estimate_case_flows(const std::string& method, const RunConfig& cfg,
                                        const MotionModel* model, const Tensor& seq) {
  const int t_count = seq.dim(0), h = seq.dim(1), w = seq.dim(2);
  auto frame = [&](int t) { return reshape(slice(seq, 0, t, 1), {h, w}); };
  if (method == "unet") {
    if (!model) throw ValueError("motion method 'unet' needs a trained checkpoint");
    return estimate_flows_unet(*model, seq);
  }
  if (method == "varreg") {
    std::vector<Tensor> flows;
    Tensor ref = frame(0);
    for (int t = 1; t < t_count; ++t) {
      flows.push_back(estimate_varreg(ref, frame(t), cfg.motion.varreg).flow);
    }
    return flows;
  }
  if (method == "f2f") {
    return estimate_flows_f2f(seq, [&](const Tensor& fixed, const Tensor& moving) {
      return estimate_varreg(fixed, moving, cfg.motion.varreg).flow;
    });
  }
  if (method == "ilk") {
    return estimate_flows_f2f(seq, [&](const Tensor& fixed, const Tensor& moving) {
      return estimate_ilk(fixed, moving, cfg.motion.ilk);
    });
  }
  throw ValueError("unknown motion method '" + method + "'");
}

namespace {

struct CaseData {
  std::string name;
  LoadedCase loaded;
  std::vector<Tensor> est_flows;  // from the trained fixed-ED network
};

// per-case myocardium-mean EPE, all frames and late frames
void epe_for_case(const CaseData& c, const std::vector<Tensor>& flows, double& epe_all,
                  double& epe_late) {
  const int t_count = c.loaded.frames.dim(0);
  double acc = 0;
  double acc_late = 0;
  int n_late = 0;
  for (int t = 1; t < t_count; ++t) {
    const double e = endpoint_error(flows[static_cast<std::size_t>(t - 1)],
                                    c.loaded.gt_flows[static_cast<std::size_t>(t - 1)],
                                    c.loaded.myo_mask);
    acc += e;
    if (t >= t_count / 2) {
      acc_late += e;
      ++n_late;
    }
  }
  epe_all = acc / (t_count - 1);
  epe_late = n_late ? acc_late / n_late : 0.0;
}

EvalReport evaluate_mode(const SegModel& model, const std::vector<CaseData>& test_cases,
                         double max_disp, double percentile) {
  EvalReport report;
  std::vector<double> ds, dm, hd;
  for (const CaseData& c : test_cases) {
    const std::vector<Tensor> flows =
        mode_uses_flows(model.mode) ? c.est_flows : std::vector<Tensor>{};
    Tensor fused = fuse_inputs(c.loaded.frames, flows, model.mode, max_disp);
    SegPrediction pred = predict_masks(model, fused);

    EvalCaseRow row;
    row.case_name = c.name;
    row.dice_scar = dice_score(pred.scar_mask, c.loaded.scar_mask);
    ds.push_back(row.dice_scar);
    if (model.dual_task) {
      row.dice_myo = dice_score(pred.myo_mask, c.loaded.myo_mask);
      dm.push_back(row.dice_myo);
    }
    try {
      row.hd_scar = hausdorff(pred.scar_mask, c.loaded.scar_mask, percentile);
      row.hd_defined = true;
      hd.push_back(row.hd_scar);
    } catch (const ValueError&) {
      row.hd_defined = false;
    }
    report.rows.push_back(row);
  }
  report.dice_scar = aggregate_or_zero(ds);
  report.dice_myo = aggregate_or_zero(dm);
  report.hd = hd.empty() ? Aggregate{std::nan(""), std::nan("")} : aggregate(hd);
  report.hd_cases = static_cast<int>(hd.size());
  return report;
}

}  // namespace

AblateResult run_ablate(const RunConfig& cfg, bool verbose) {
  const auto t_start = std::chrono::steady_clock::now();
  AblateResult result;

  const fs::path data_dir = cfg.io.dataset_dir;
  const fs::path out_dir = cfg.io.out_dir;
  fs::create_directories(out_dir);

  log_line(verbose, "generating datasets");
  generate_dataset(cfg.phantom, cfg.jitter, cfg.ablate.train_cases,
                   derive_seed(cfg.seed, "dataset-train"), data_dir / "train");
  generate_dataset(cfg.phantom, cfg.jitter, cfg.ablate.test_cases,
                   derive_seed(cfg.seed, "dataset-test"), data_dir / "test");

  auto load_split = [](const fs::path& dir) {
    std::vector<CaseData> cases;
    for (const fs::path& p : list_case_dirs(dir)) {
      CaseData c;
      c.name = p.filename().string();
      c.loaded = load_case(p);
      cases.push_back(std::move(c));
    }
    return cases;
  };
  std::vector<CaseData> train_cases = load_split(data_dir / "train");
  std::vector<CaseData> test_cases = load_split(data_dir / "test");

  // ---- motion network on the training sequences
  log_line(verbose, "training motion network (" + std::to_string(cfg.motion.train.epochs) +
                        " epochs)");
  const auto t_motion = std::chrono::steady_clock::now();
  MotionTrainConfig mcfg = cfg.motion.train;
  mcfg.seed = derive_seed(cfg.seed, "motion-train");
  std::vector<Tensor> train_seqs;
  for (const CaseData& c : train_cases) train_seqs.push_back(c.loaded.frames);
  MotionTrainResult motion = train_motion_model(train_seqs, mcfg);
  result.motion_loss_trace = motion.loss_trace;
  result.motion_train_seconds = seconds_since(t_motion);
  log_line(verbose, "motion training done in " + std::to_string(result.motion_train_seconds) + " s");

  for (CaseData& c : train_cases) c.est_flows = estimate_flows_unet(motion.model, c.loaded.frames);
  for (CaseData& c : test_cases) c.est_flows = estimate_flows_unet(motion.model, c.loaded.frames);

  // ---- motion-effectiveness table on held-out cases
  log_line(verbose, "comparing motion estimators on held-out cases");
  {
    std::vector<double> ilk_all, ilk_late, f2f_all, f2f_late, fe_all, fe_late;
    for (const CaseData& c : test_cases) {
      double a, l;
      auto ilk_flows = estimate_case_flows("ilk", cfg, nullptr, c.loaded.frames);
      epe_for_case(c, ilk_flows, a, l);
      ilk_all.push_back(a);
      ilk_late.push_back(l);
      auto f2f_flows = estimate_case_flows("f2f", cfg, nullptr, c.loaded.frames);
      epe_for_case(c, f2f_flows, a, l);
      f2f_all.push_back(a);
      f2f_late.push_back(l);
      epe_for_case(c, c.est_flows, a, l);
      fe_all.push_back(a);
      fe_late.push_back(l);
    }
    result.motion_rows = {
        {"ilk", aggregate(ilk_all), aggregate(ilk_late)},
        {"f2f", aggregate(f2f_all), aggregate(f2f_late)},
        {"fixed_ed", aggregate(fe_all), aggregate(fe_late)},
    };
  }

  // ---- segmentation ablation (dual-task) + the single-task reference
  auto make_samples = [&](const std::vector<CaseData>& cases, AblationMode mode) {
    std::vector<CineSample> samples;
    for (const CaseData& c : cases) {
      CineSample s;
      s.frames = c.loaded.frames;
      s.myo_mask = c.loaded.myo_mask;
      s.scar_mask = c.loaded.scar_mask;
      if (mode_uses_flows(mode)) s.flows = c.est_flows;
      samples.push_back(std::move(s));
    }
    return samples;
  };

  const AblationMode modes[] = {AblationMode::ed_only, AblationMode::all_frames,
                                AblationMode::of_plus_ed, AblationMode::of_plus_all};
  for (std::size_t mi = 0; mi < 4; ++mi) {
    const AblationMode mode = modes[mi];
    log_line(verbose, std::string("training segmentation, mode ") + ablation_mode_name(mode));
    SegTrainConfig scfg = cfg.seg.train;
    scfg.dual_task = true;
    scfg.seed = derive_seed(cfg.seed, "seg-train", mi);
    SegTrainResult seg = train_seg_model(make_samples(train_cases, mode), mode, scfg);
    result.table1.push_back(
        {mode, evaluate_mode(seg.model, test_cases, scfg.max_disp, cfg.eval.percentile)});
  }
  {
    log_line(verbose, "training segmentation, mode ED_ONLY single-task");
    SegTrainConfig scfg = cfg.seg.train;
    scfg.dual_task = false;
    scfg.seed = derive_seed(cfg.seed, "seg-train", 0);  // same stream as the dual ED_ONLY run
    SegTrainResult seg =
        train_seg_model(make_samples(train_cases, AblationMode::ed_only), AblationMode::ed_only, scfg);
    result.ed_only_single =
        evaluate_mode(seg.model, test_cases, scfg.max_disp, cfg.eval.percentile);
  }

  result.total_seconds = seconds_since(t_start);
  write_ablate_csvs(out_dir, result);
  log_line(verbose, "done in " + std::to_string(result.total_seconds) + " s");
  return result;
}

void write_ablate_csvs(const fs::path& out_dir, const AblateResult& result) {
  {
    std::ofstream out(out_dir / "table1.csv", std::ios::trunc);
    if (!out) throw ValueError("cannot write table1.csv");
    out << "mode,dice_scar_mean,dice_scar_sd,dice_myo_mean,dice_myo_sd,hd95_mean,hd95_sd\n";
    for (const ModeRow& row : result.table1) {
      const EvalReport& r = row.report;
      out << ablation_mode_name(row.mode) << ',' << format_csv_number(r.dice_scar.mean) << ','
          << format_csv_number(r.dice_scar.sd) << ',' << format_csv_number(r.dice_myo.mean) << ','
          << format_csv_number(r.dice_myo.sd) << ',' << format_csv_number(r.hd.mean) << ','
          << format_csv_number(r.hd.sd) << '\n';
    }
  }
  {
    std::ofstream out(out_dir / "motion_table.csv", std::ios::trunc);
    if (!out) throw ValueError("cannot write motion_table.csv");
    out << "method,epe_mean,epe_sd,epe_late_mean,epe_late_sd\n";
    for (const MotionMethodRow& row : result.motion_rows) {
      out << row.method << ',' << format_csv_number(row.epe.mean) << ','
          << format_csv_number(row.epe.sd) << ',' << format_csv_number(row.epe_late.mean) << ','
          << format_csv_number(row.epe_late.sd) << '\n';
    }
  }
  {
    std::ofstream out(out_dir / "dual_task.csv", std::ios::trunc);
    if (!out) throw ValueError("cannot write dual_task.csv");
    out << "config,dice_scar_mean,dice_scar_sd\n";
    for (const ModeRow& row : result.table1) {
      if (row.mode == AblationMode::ed_only) {
        out << "ed_only_dual," << format_csv_number(row.report.dice_scar.mean) << ','
            << format_csv_number(row.report.dice_scar.sd) << '\n';
      }
    }
    out << "ed_only_single," << format_csv_number(result.ed_only_single.dice_scar.mean) << ','
        << format_csv_number(result.ed_only_single.dice_scar.sd) << '\n';
  }
}

}  // namespace cineseg
