#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "cineseg/augment.hpp"
#include "cineseg/checkpoint.hpp"
#include "cineseg/config.hpp"
#include "cineseg/dataset.hpp"
#include "cineseg/harness.hpp"
#include "cineseg/imagewarp.hpp"
#include "cineseg/ops.hpp"
#include "cineseg/pgm.hpp"
#include "cineseg/phantom.hpp"
#include "cineseg/rng.hpp"
#include "cineseg/tensorfile.hpp"
#include "doctest.h"

using namespace cineseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("cineseg_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("tensor file round trips are bit-exact") {
  const fs::path dir = temp_dir("tns");
  PrecisionGuard guard(Precision::f32);
  Rng rng(3);
  // a handful of random shapes up to rank 4
  for (int it = 0; it < 8; ++it) {
    std::vector<int> shape;
    const int rank = 1 + static_cast<int>(rng.uniform_index(4));
    for (int i = 0; i < rank; ++i) shape.push_back(1 + static_cast<int>(rng.uniform_index(7)));
    std::vector<double> vals(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : vals) v = rng.uniform(-5, 5);
    Tensor t = Tensor::from_vector(shape, vals);
    write_tensor_file(dir / "t.tns", t);
    Tensor u = read_tensor_file(dir / "t.tns");
    CHECK(u.shape() == shape);
    CHECK(u.to_vector() == t.to_vector());
    // byte-identical rewrite
    write_tensor_file(dir / "u.tns", u);
    CHECK(slurp(dir / "t.tns") == slurp(dir / "u.tns"));
  }

  // f64 payloads keep full precision
  {
    PrecisionGuard g64(Precision::f64);
    Tensor t = Tensor::from_vector({3}, {1.0 / 3.0, 2.0 / 7.0, 1e-17});
    write_tensor_file(dir / "d.tns", t, TensorFileType::f64);
    CHECK(read_tensor_file(dir / "d.tns").to_vector() == t.to_vector());
  }

  std::ofstream bad(dir / "bad.tns", std::ios::binary);
  bad << "NOPE";
  bad.close();
  CHECK_THROWS_AS(read_tensor_file(dir / "bad.tns"), ValueError);
}

TEST_CASE("run config parsing is strict") {
  RunConfig defaults = parse_run_config(json::object());
  CHECK(defaults.seg.train.epochs == 400);
  CHECK(defaults.motion.train.epochs == 1000);
  CHECK(defaults.motion.train.batch_size == 16);
  CHECK(defaults.seg.train.batch_size == 8);
  CHECK(defaults.motion.train.lr == 5e-4);

  RunConfig cfg = parse_run_config(json{{"seed", 7}, {"seg", {{"mode", "ed_only"}}}});
  CHECK(cfg.seed == 7);
  CHECK(cfg.seg.mode == AblationMode::ed_only);

  CHECK_THROWS_AS(parse_run_config(json{{"sed", 7}}), ValueError);
  CHECK_THROWS_AS(parse_run_config(json{{"phantom", {{"r_inner_typo", 3}}}}), ValueError);
  CHECK_THROWS_AS(parse_run_config(json{{"motion", {{"method", "magic"}}}}), ValueError);
  CHECK_THROWS_AS(parse_run_config(json{{"seg", {{"mode", "all"}}}}), ValueError);
  CHECK_THROWS_AS(parse_run_config(json{{"eval", {{"percentile", 0}}}}), ValueError);

  // resolved dump re-parses to the same config
  json dumped = run_config_to_json(cfg);
  RunConfig back = parse_run_config(dumped);
  CHECK(run_config_to_json(back) == dumped);
}

TEST_CASE("checkpoint round trip reproduces forward outputs exactly") {
  const fs::path dir = temp_dir("ckpt");
  PrecisionGuard guard(Precision::f32);
  UNetSpec spec;
  spec.in_channels = 3;
  spec.out_channels = 2;
  spec.depth = 2;
  spec.base_channels = 4;
  spec.final_activation = FinalActivation::sigmoid;
  UNet net = UNet::build(spec, 77);

  save_checkpoint(dir, net, json{{"kind", "seg"}});
  json extra;
  UNet restored = load_checkpoint(dir, &extra);
  CHECK(extra.at("kind") == "seg");

  Rng rng(5);
  std::vector<double> v(3 * 16 * 16);
  for (auto& x : v) x = rng.uniform(0, 1);
  Tensor input = Tensor::from_vector({1, 3, 16, 16}, v);
  CHECK(net.forward(input).to_vector() == restored.forward(input).to_vector());

  // the manifest lists every parameter tensor
  json manifest;
  std::ifstream in(dir / "manifest.json");
  in >> manifest;
  CHECK(manifest.at("params").size() == net.named_parameters().size());

  // precision mismatch is rejected
  {
    PrecisionGuard g64(Precision::f64);
    CHECK_THROWS_AS(load_checkpoint(dir), ValueError);
  }
}

TEST_CASE("augmentation identities") {
  PhantomConfig pcfg;
  pcfg.seed = 5;
  PhantomCase pc = generate_phantom(pcfg);
  CineSample s;
  s.frames = pc.frames;
  s.flows = pc.gt_flows;
  s.myo_mask = pc.myo_mask;
  s.scar_mask = pc.scar_mask;

  // identity draw returns the sample bit-for-bit
  CineSample same = augment_sample(s, AugmentDraw{});
  CHECK(same.frames.to_vector() == s.frames.to_vector());
  CHECK(same.flows[2].to_vector() == s.flows[2].to_vector());
  CHECK(same.myo_mask.to_vector() == s.myo_mask.to_vector());

  // a horizontal flip is an involution, flows included
  AugmentDraw flip;
  flip.hflip = true;
  CineSample twice = augment_sample(augment_sample(s, flip), flip);
  CHECK(twice.frames.to_vector() == s.frames.to_vector());
  CHECK(twice.flows[3].to_vector() == s.flows[3].to_vector());
  CHECK(twice.scar_mask.to_vector() == s.scar_mask.to_vector());

  // masks stay binary after rotation
  AugmentDraw rot;
  rot.angle = 0.31;
  CineSample rotated = augment_sample(s, rot);
  for (std::int64_t i = 0; i < rotated.myo_mask.numel(); ++i) {
    const double v = rotated.myo_mask.at(i);
    CHECK((v == 0.0 || v == 1.0));
  }
}

TEST_CASE("rotation is warp-equivariant") {
  PhantomConfig pcfg;
  pcfg.seed = 6;
  PhantomCase pc = generate_phantom(pcfg);
  const int h = pcfg.height, w = pcfg.width;
  CineSample s;
  s.frames = pc.frames;
  s.flows = pc.gt_flows;
  s.myo_mask = pc.myo_mask;
  s.scar_mask = pc.scar_mask;

  AugmentDraw rot;
  rot.angle = -0.42;
  CineSample r = augment_sample(s, rot);

  const int t = 4;
  Tensor frame_t = reshape(slice(s.frames, 0, t, 1), {h, w});
  Tensor warped_then_rot =
      augment_sample(
          CineSample{reshape(warp_bilinear(frame_t, s.flows[t - 1]), {1, h, w}), {}, {}, {}}, rot)
          .frames;
  Tensor rot_then_warped =
      warp_bilinear(reshape(slice(r.frames, 0, t, 1), {h, w}), r.flows[t - 1]);

  double dev = 0;
  int count = 0;
  for (int y = 8; y < h - 8; ++y) {
    for (int x = 8; x < w - 8; ++x) {
      dev += std::fabs(rot_then_warped.at(y * w + x) - warped_then_rot.at(y * w + x));
      ++count;
    }
  }
  CHECK(dev / count <= 2e-2);
}

TEST_CASE("dataset generation is deterministic and self-consistent") {
  const fs::path dir_a = temp_dir("data_a");
  const fs::path dir_b = temp_dir("data_b");
  PrecisionGuard guard(Precision::f32);
  PhantomConfig base;
  PhantomJitter jitter;
  generate_dataset(base, jitter, 3, 42, dir_a);
  generate_dataset(base, jitter, 3, 42, dir_b);

  auto cases_a = list_case_dirs(dir_a);
  auto cases_b = list_case_dirs(dir_b);
  REQUIRE(cases_a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (const char* f : {"cine.tns", "myo_ed.tns", "scar_ed.tns", "flow_gt.tns", "meta.json"}) {
      CHECK(slurp(cases_a[i] / f) == slurp(cases_b[i] / f));
    }
  }

  // jitter varies the anatomy across cases
  LoadedCase c0 = load_case(cases_a[0]);
  LoadedCase c1 = load_case(cases_a[1]);
  CHECK(c0.myo_mask.to_vector() != c1.myo_mask.to_vector());
  CHECK(c0.gt_flows.size() == 7);
  CHECK(c0.meta.at("config").at("r_inner") != c1.meta.at("config").at("r_inner"));
}

TEST_CASE("seed derivation separates streams") {
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(1, "a", 3) == derive_seed(1, "a", 3));
}

TEST_CASE("pgm export writes valid headers") {
  const fs::path dir = temp_dir("pgm");
  Tensor img = Tensor::from_vector({2, 3}, {0, 1, 2, 3, 4, 5});
  write_pgm(dir / "img.pgm", img);
  const std::string data = slurp(dir / "img.pgm");
  CHECK(data.substr(0, 3) == "P5\n");
  CHECK(data.find("3 2\n255\n") != std::string::npos);
  CHECK(data.size() == std::string("P5\n3 2\n255\n").size() + 6);
  CHECK(static_cast<unsigned char>(data.back()) == 255);  // max value maps to white

  write_flow_pgms(dir / "flow", Tensor::zeros({2, 4, 4}));
  CHECK(fs::exists(dir / "flow_dx.pgm"));
  CHECK(fs::exists(dir / "flow_dy.pgm"));
}

TEST_CASE("evaluation of perfect predictions") {
  const fs::path data = temp_dir("eval_gt");
  const fs::path pred = temp_dir("eval_pred");
  PrecisionGuard guard(Precision::f32);
  generate_dataset(PhantomConfig{}, PhantomJitter{}, 2, 11, data);
  for (const fs::path& c : list_case_dirs(data)) {
    LoadedCase lc = load_case(c);
    fs::create_directories(pred / c.filename());
    write_tensor_file(pred / c.filename() / "scar_pred.tns", lc.scar_mask);
    write_tensor_file(pred / c.filename() / "myo_pred.tns", lc.myo_mask);
  }
  EvalReport report = evaluate_predictions(pred, data, 95.0);
  CHECK(report.rows.size() == 2);
  CHECK(report.dice_scar.mean == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(report.dice_myo.mean == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(report.hd.mean == 0.0);

  const fs::path csv = temp_dir("eval_csv") / "report.csv";
  write_eval_csv(csv, "identity", report);
  const std::string text = slurp(csv);
  CHECK(text.find("method,dice_scar_mean") == 0);
  CHECK(text.find("identity,1.0000") != std::string::npos);
}
