#pragma once

#include <filesystem>

#include "json.hpp"

#include "cineseg/unet.hpp"

namespace cineseg {

// Checkpoint directory: manifest.json plus one .tns file per parameter.
// Parameters are stored at the run-mode precision, so a reload under the
// same mode reproduces bit-identical forward outputs. `extra` carries
// model-kind metadata (e.g. segmentation mode) and round-trips untouched.
void save_checkpoint(const std::filesystem::path& dir, const UNet& net,
                     const nlohmann::json& extra = {});

UNet load_checkpoint(const std::filesystem::path& dir, nlohmann::json* extra = nullptr);

}  // namespace cineseg
