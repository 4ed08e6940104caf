#pragma once

#include <filesystem>

#include "cineseg/tensor.hpp"

namespace cineseg {

// Binary tensor container:
//   magic "TNS1" | dtype u8 (1 = f32, 2 = f64) | rank u8 | dims u32 LE each |
//   row-major payload, little-endian.
// Round-trips are bit-exact for matching dtypes.

enum class TensorFileType : unsigned char { f32 = 1, f64 = 2 };

void write_tensor_file(const std::filesystem::path& path, const Tensor& t,
                       TensorFileType type = TensorFileType::f32);

// The tensor is created at the current global precision; f32 payloads load
// losslessly in either mode.
Tensor read_tensor_file(const std::filesystem::path& path);

}  // namespace cineseg
