// Command-line front end: phantom generation, motion training/estimation,
// segmentation training/prediction, evaluation, the ablation harness, and
// PGM export.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cineseg/checkpoint.hpp"
#include "cineseg/config.hpp"
#include "cineseg/dataset.hpp"
#include "cineseg/harness.hpp"
#include "cineseg/ops.hpp"
#include "cineseg/pgm.hpp"
#include "cineseg/tensorfile.hpp"

namespace fs = std::filesystem;
using namespace cineseg;
using nlohmann::json;

namespace {

RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

MotionModel load_motion_model(const fs::path& ckpt) {
  json extra;
  MotionModel m;
  m.net = load_checkpoint(ckpt, &extra);
  if (extra.value("kind", "") != "motion") {
    throw ValueError("checkpoint at " + ckpt.string() + " is not a motion model");
  }
  return m;
}

std::vector<Tensor> flows_for_case(const std::string& source, const RunConfig& cfg,
                                   const MotionModel* model, const LoadedCase& c) {
  if (source == "gt") {
    if (c.gt_flows.empty()) throw ValueError("case has no flow_gt.tns but --flows gt was given");
    return c.gt_flows;
  }
  if (source == "none") return {};
  return estimate_case_flows(source, cfg, model, c.frames);
}

int run(int argc, char** argv) {
  CLI::App app{"contrast-free myocardial scar segmentation from cine sequences"};
  app.require_subcommand(1);
  std::string precision_name = "f32";
  app.add_option("--precision", precision_name, "scalar mode: f32 (fast) or f64 (oracle)")
      ->check(CLI::IsMember({"f32", "f64"}));

  std::string config_path;
  std::uint64_t seed_override = 0;
  bool seed_given = false;

  // phantom gen
  auto* phantom = app.add_subcommand("phantom", "synthetic cine phantoms");
  auto* gen = phantom->add_subcommand("gen", "generate a dataset of phantom cases");
  int gen_cases = 1;
  std::string gen_out;
  gen->add_option("--config", config_path, "run config JSON");
  gen->add_option("--cases", gen_cases, "number of cases")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", seed_override, "override the config seed")
      ->each([&](const std::string&) { seed_given = true; });

  // motion train / estimate
  auto* motion = app.add_subcommand("motion", "cardiac motion extraction");
  auto* mtrain = motion->add_subcommand("train", "train the fixed-reference flow network");
  std::string mtrain_data, mtrain_out;
  mtrain->add_option("--config", config_path, "run config JSON");
  mtrain->add_option("--data", mtrain_data, "dataset directory")->required();
  mtrain->add_option("--out", mtrain_out, "checkpoint directory")->required();
  mtrain->add_option("--seed", seed_override, "override the config seed")
      ->each([&](const std::string&) { seed_given = true; });

  auto* mest = motion->add_subcommand("estimate", "estimate flows for every case");
  std::string mest_data, mest_out, mest_method = "unet", mest_ckpt;
  mest->add_option("--config", config_path, "run config JSON");
  mest->add_option("--method", mest_method, "unet|varreg|f2f|ilk")
      ->check(CLI::IsMember({"unet", "varreg", "f2f", "ilk"}));
  mest->add_option("--data", mest_data, "dataset directory")->required();
  mest->add_option("--ckpt", mest_ckpt, "motion checkpoint (for --method unet)");
  mest->add_option("--out", mest_out, "output directory for flow tensors")->required();

  // seg train / predict
  auto* seg = app.add_subcommand("seg", "scar + myocardium segmentation");
  auto* strain = seg->add_subcommand("train", "train the segmentation network");
  std::string strain_data, strain_out, strain_mode, strain_flows = "unet", strain_mckpt;
  strain->add_option("--config", config_path, "run config JSON");
  strain->add_option("--data", strain_data, "dataset directory")->required();
  strain->add_option("--mode", strain_mode, "ed_only|all_frames|of_plus_ed|of_plus_all");
  strain->add_option("--flows", strain_flows, "flow source: unet|varreg|gt|none")
      ->check(CLI::IsMember({"unet", "varreg", "gt", "none"}));
  strain->add_option("--motion-ckpt", strain_mckpt, "motion checkpoint for --flows unet");
  strain->add_option("--out", strain_out, "checkpoint directory")->required();
  strain->add_option("--seed", seed_override, "override the config seed")
      ->each([&](const std::string&) { seed_given = true; });

  auto* spredict = seg->add_subcommand("predict", "predict masks for every case");
  std::string sp_data, sp_out, sp_ckpt, sp_flows = "unet", sp_mckpt;
  spredict->add_option("--config", config_path, "run config JSON");
  spredict->add_option("--data", sp_data, "dataset directory")->required();
  spredict->add_option("--ckpt", sp_ckpt, "segmentation checkpoint")->required();
  spredict->add_option("--flows", sp_flows, "flow source: unet|varreg|gt|none")
      ->check(CLI::IsMember({"unet", "varreg", "gt", "none"}));
  spredict->add_option("--motion-ckpt", sp_mckpt, "motion checkpoint for --flows unet");
  spredict->add_option("--out", sp_out, "output directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate predictions against ground truth");
  std::string ev_pred, ev_gt, ev_out = "report.csv", ev_method = "model";
  double ev_percentile = 95.0;
  eval_cmd->add_option("--pred", ev_pred, "prediction directory")->required();
  eval_cmd->add_option("--gt", ev_gt, "ground-truth dataset directory")->required();
  eval_cmd->add_option("--out", ev_out, "output CSV path");
  eval_cmd->add_option("--method", ev_method, "method name for the CSV row");
  eval_cmd->add_option("--percentile", ev_percentile, "Hausdorff percentile");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run the full experiment harness");
  std::string ab_data, ab_out;
  ablate->add_option("--config", config_path, "run config JSON");
  ablate->add_option("--data", ab_data, "override io.dataset_dir");
  ablate->add_option("--out", ab_out, "override io.out_dir");
  ablate->add_option("--seed", seed_override, "override the config seed")
      ->each([&](const std::string&) { seed_given = true; });

  // export
  auto* export_cmd = app.add_subcommand("export", "export tensors as PGM previews");
  std::string ex_in, ex_out;
  bool ex_pgm = false;
  export_cmd->add_flag("--pgm", ex_pgm, "write 8-bit P5 previews");
  export_cmd->add_option("--in", ex_in, "input .tns file")->required();
  export_cmd->add_option("--out", ex_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  }

  set_precision(precision_name == "f64" ? Precision::f64 : Precision::f32);

  if (gen->parsed()) {
    RunConfig cfg = load_config_or_default(config_path);
    if (seed_given) cfg.seed = seed_override;
    generate_dataset(cfg.phantom, cfg.jitter, gen_cases, cfg.seed, gen_out);
    std::printf("wrote %d cases to %s\n", gen_cases, gen_out.c_str());
    return 0;
  }

  if (mtrain->parsed()) {
    RunConfig cfg = load_config_or_default(config_path);
    if (seed_given) cfg.seed = seed_override;
    MotionTrainConfig mcfg = cfg.motion.train;
    mcfg.seed = derive_seed(cfg.seed, "motion-train");
    std::vector<Tensor> seqs;
    for (const fs::path& p : list_case_dirs(mtrain_data)) seqs.push_back(load_case(p).frames);
    MotionTrainResult r = train_motion_model(seqs, mcfg);
    save_checkpoint(mtrain_out, r.model.net, json{{"kind", "motion"}});
    std::printf("trained motion model on %zu sequences, final loss %.6f; checkpoint at %s\n",
                seqs.size(), r.loss_trace.back(), mtrain_out.c_str());
    return 0;
  }

  if (mest->parsed()) {
    RunConfig cfg = load_config_or_default(config_path);
    MotionModel model;
    if (mest_method == "unet") {
      if (mest_ckpt.empty()) throw UsageError("--method unet requires --ckpt");
      model = load_motion_model(mest_ckpt);
    }
    for (const fs::path& p : list_case_dirs(mest_data)) {
      LoadedCase c = load_case(p);
      auto flows = estimate_case_flows(mest_method, cfg,
                                       mest_method == "unet" ? &model : nullptr, c.frames);
      const int h = c.frames.dim(1), w = c.frames.dim(2);
      std::vector<Tensor> slabs;
      for (const Tensor& f : flows) slabs.push_back(reshape(f, {1, 2, h, w}));
      const fs::path dir = fs::path(mest_out) / p.filename();
      fs::create_directories(dir);
      write_tensor_file(dir / ("flows_" + mest_method + ".tns"), concat(slabs, 0));
    }
    std::printf("estimated %s flows into %s\n", mest_method.c_str(), mest_out.c_str());
    return 0;
  }

  if (strain->parsed()) {
    RunConfig cfg = load_config_or_default(config_path);
    if (seed_given) cfg.seed = seed_override;
    const AblationMode mode =
        strain_mode.empty() ? cfg.seg.mode : ablation_mode_from_name(strain_mode);
    if (mode_uses_flows(mode) && strain_flows == "none") {
      throw ValueError(std::string("mode ") + ablation_mode_name(mode) + " needs a flow source");
    }
    MotionModel model;
    const bool use_net = mode_uses_flows(mode) && strain_flows == "unet";
    if (use_net) {
      if (strain_mckpt.empty()) throw UsageError("--flows unet requires --motion-ckpt");
      model = load_motion_model(strain_mckpt);
    }
    std::vector<CineSample> samples;
    for (const fs::path& p : list_case_dirs(strain_data)) {
      LoadedCase c = load_case(p);
      CineSample s;
      s.frames = c.frames;
      s.myo_mask = c.myo_mask;
      s.scar_mask = c.scar_mask;
      if (mode_uses_flows(mode)) {
        s.flows = flows_for_case(strain_flows, cfg, use_net ? &model : nullptr, c);
      }
      samples.push_back(std::move(s));
    }
    SegTrainConfig scfg = cfg.seg.train;
    scfg.seed = derive_seed(cfg.seed, "seg-train");
    SegTrainResult r = train_seg_model(samples, mode, scfg);
    save_checkpoint(strain_out, r.model.net,
                    json{{"kind", "seg"},
                         {"mode", ablation_mode_name(mode)},
                         {"dual_task", scfg.dual_task},
                         {"max_disp", scfg.max_disp},
                         {"t_frames", r.model.t_frames}});
    std::printf("trained %s segmentation on %zu cases, final loss %.6f; checkpoint at %s\n",
                ablation_mode_name(mode), samples.size(), r.loss_trace.back(), strain_out.c_str());
    return 0;
  }

  if (spredict->parsed()) {
    RunConfig cfg = load_config_or_default(config_path);
    json extra;
    SegModel model;
    model.net = load_checkpoint(sp_ckpt, &extra);
    if (extra.value("kind", "") != "seg") {
      throw ValueError("checkpoint at " + sp_ckpt + " is not a segmentation model");
    }
    model.mode = ablation_mode_from_name(extra.at("mode").get<std::string>());
    model.dual_task = extra.at("dual_task").get<bool>();
    model.max_disp = extra.at("max_disp").get<double>();
    model.t_frames = extra.at("t_frames").get<int>();

    MotionModel mmodel;
    const bool use_net = mode_uses_flows(model.mode) && sp_flows == "unet";
    if (use_net) {
      if (sp_mckpt.empty()) throw UsageError("--flows unet requires --motion-ckpt");
      mmodel = load_motion_model(sp_mckpt);
    }
    for (const fs::path& p : list_case_dirs(sp_data)) {
      LoadedCase c = load_case(p);
      std::vector<Tensor> flows;
      if (mode_uses_flows(model.mode)) {
        flows = flows_for_case(sp_flows, cfg, use_net ? &mmodel : nullptr, c);
      }
      Tensor fused = fuse_inputs(c.frames, flows, model.mode, model.max_disp);
      SegPrediction pred = predict_masks(model, fused);
      const fs::path dir = fs::path(sp_out) / p.filename();
      fs::create_directories(dir);
      write_tensor_file(dir / "scar_pred.tns", pred.scar_mask);
      write_pgm(dir / "scar_pred.pgm", pred.scar_prob);
      if (model.dual_task) {
        write_tensor_file(dir / "myo_pred.tns", pred.myo_mask);
        write_pgm(dir / "myo_pred.pgm", pred.myo_prob);
      }
    }
    std::printf("wrote predictions to %s\n", sp_out.c_str());
    return 0;
  }

  if (eval_cmd->parsed()) {
    EvalReport report = evaluate_predictions(ev_pred, ev_gt, ev_percentile);
    write_eval_csv(ev_out, ev_method, report);
    std::printf("dice_scar %.4f +- %.4f", report.dice_scar.mean, report.dice_scar.sd);
    if (!report.rows.empty() && report.hd_cases > 0) {
      std::printf("  hd%g %.4f +- %.4f", ev_percentile, report.hd.mean, report.hd.sd);
    }
    std::printf("  (%zu cases) -> %s\n", report.rows.size(), ev_out.c_str());
    return 0;
  }

  if (ablate->parsed()) {
    RunConfig cfg = load_config_or_default(config_path);
    if (seed_given) cfg.seed = seed_override;
    if (!ab_data.empty()) cfg.io.dataset_dir = ab_data;
    if (!ab_out.empty()) cfg.io.out_dir = ab_out;
    AblateResult r = run_ablate(cfg);
    std::printf("table1.csv, motion_table.csv, dual_task.csv written to %s (%.1f s total)\n",
                cfg.io.out_dir.c_str(), r.total_seconds);
    return 0;
  }

  if (export_cmd->parsed()) {
    if (!ex_pgm) throw UsageError("export: only --pgm is supported");
    Tensor t = read_tensor_file(ex_in);
    fs::create_directories(ex_out);
    const fs::path base = fs::path(ex_out) / fs::path(ex_in).stem();
    if (t.rank() == 2) {
      write_pgm(base.string() + ".pgm", t);
    } else if (t.rank() == 3 && t.dim(0) == 2) {
      write_flow_pgms(base, t);
    } else if (t.rank() == 3) {
      for (int i = 0; i < t.dim(0); ++i) {
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "_t%02d.pgm", i);
        write_pgm(base.string() + suffix, reshape(slice(t, 0, i, 1), {t.dim(1), t.dim(2)}));
      }
    } else if (t.rank() == 4 && t.dim(1) == 2) {
      for (int i = 0; i < t.dim(0); ++i) {
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "_t%02d", i);
        write_flow_pgms(base.string() + suffix,
                        reshape(slice(t, 0, i, 1), {2, t.dim(2), t.dim(3)}));
      }
    } else {
      throw ValueError("export: unsupported tensor shape " + shape_str(t.shape()));
    }
    std::printf("previews written to %s\n", ex_out.c_str());
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const ValueError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
