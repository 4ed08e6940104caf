#pragma once

#include <filesystem>

#include "cineseg/tensor.hpp"

namespace cineseg {

// 8-bit binary P5 preview. Intensities are min-max scaled per image; a
// constant image maps to mid-gray.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

// One PGM per flow component: <stem>_dx.pgm and <stem>_dy.pgm.
void write_flow_pgms(const std::filesystem::path& stem, const Tensor& flow);

}  // namespace cineseg
