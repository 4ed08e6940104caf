#include "cineseg/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "cineseg/tensorfile.hpp"

namespace cineseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* activation_name(FinalActivation a) {
  return a == FinalActivation::sigmoid ? "sigmoid" : "none";
}

FinalActivation activation_from(const std::string& s) {
  if (s == "sigmoid") return FinalActivation::sigmoid;
  if (s == "none") return FinalActivation::none;
  throw ValueError("checkpoint: unknown final activation '" + s + "'");
}

}  // namespace

void save_checkpoint(const fs::path& dir, const UNet& net, const json& extra) {
  if (!net.defined()) throw ValueError("checkpoint: model is unbuilt");
  fs::create_directories(dir);
  const UNetSpec& spec = net.spec();
  const bool f64 = precision() == Precision::f64;

  json params = json::array();
  int index = 0;
  for (const auto& [name, t] : net.named_parameters()) {
    char file[16];
    std::snprintf(file, sizeof file, "p%03d.tns", index++);
    write_tensor_file(dir / file, t, f64 ? TensorFileType::f64 : TensorFileType::f32);
    params.push_back({{"name", name}, {"file", file}, {"shape", t.shape()}});
  }
  json manifest{{"format", 1},
                {"precision", f64 ? "f64" : "f32"},
                {"unet",
                 {{"in_channels", spec.in_channels},
                  {"out_channels", spec.out_channels},
                  {"depth", spec.depth},
                  {"base_channels", spec.base_channels},
                  {"final_activation", activation_name(spec.final_activation)},
                  {"head_init", spec.head_init == HeadInit::zero ? "zero" : "he"}}},
                {"params", params},
                {"extra", extra}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw ValueError("checkpoint: cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

UNet load_checkpoint(const fs::path& dir, json* extra) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ValueError("checkpoint: no manifest in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ValueError("checkpoint: bad manifest: " + std::string(e.what()));
  }
  const std::string prec = manifest.at("precision").get<std::string>();
  const std::string current = precision() == Precision::f64 ? "f64" : "f32";
  if (prec != current) {
    throw ValueError("checkpoint: saved under precision " + prec + " but running " + current);
  }

  const json& u = manifest.at("unet");
  UNetSpec spec;
  spec.in_channels = u.at("in_channels").get<int>();
  spec.out_channels = u.at("out_channels").get<int>();
  spec.depth = u.at("depth").get<int>();
  spec.base_channels = u.at("base_channels").get<int>();
  spec.final_activation = activation_from(u.at("final_activation").get<std::string>());
  spec.head_init = u.at("head_init").get<std::string>() == "zero" ? HeadInit::zero : HeadInit::he;

  UNet net = UNet::build(spec, 0);
  auto params = net.named_parameters();
  const json& saved = manifest.at("params");
  if (saved.size() != params.size()) {
    throw ValueError("checkpoint: expected " + std::to_string(params.size()) +
                     " parameter tensors, manifest lists " + std::to_string(saved.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& entry = saved.at(i);
    auto& [name, tensor] = params[i];
    if (entry.at("name").get<std::string>() != name) {
      throw ValueError("checkpoint: parameter order mismatch at '" + name + "'");
    }
    Tensor loaded = read_tensor_file(dir / entry.at("file").get<std::string>());
    if (loaded.shape() != tensor.shape()) {
      throw ValueError("checkpoint: shape mismatch for '" + name + "': saved " +
                       shape_str(loaded.shape()) + " vs model " + shape_str(tensor.shape()));
    }
    Node& n = tensor.unwrap();
    for (std::int64_t j = 0; j < loaded.numel(); ++j) {
      n.data.set(static_cast<std::size_t>(j), loaded.at(j));
    }
  }
  if (extra) *extra = manifest.value("extra", json::object());
  return net;
}

}  // namespace cineseg
