#include "cineseg/tensorfile.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace cineseg {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are unsupported");

namespace {
constexpr char kMagic[4] = {'T', 'N', 'S', '1'};
}

void write_tensor_file(const std::filesystem::path& path, const Tensor& t, TensorFileType type) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValueError("cannot open for writing: " + path.string());
  out.write(kMagic, 4);
  const unsigned char dtype = static_cast<unsigned char>(type);
  const unsigned char rank = static_cast<unsigned char>(t.rank());
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(rank));
  for (int d : t.shape()) {
    const std::uint32_t v = static_cast<std::uint32_t>(d);
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  const std::int64_t n = t.numel();
  if (type == TensorFileType::f32) {
    std::vector<float> payload(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) payload[static_cast<std::size_t>(i)] = static_cast<float>(t.at(i));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
  } else {
    std::vector<double> payload(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) payload[static_cast<std::size_t>(i)] = t.at(i);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
  }
  if (!out) throw ValueError("write failed: " + path.string());
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("cannot open tensor file: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw ValueError("not a tensor file (bad magic): " + path.string());
  }
  const int dtype = in.get();
  const int rank = in.get();
  if (dtype != 1 && dtype != 2) {
    throw ValueError("unknown dtype code " + std::to_string(dtype) + " in " + path.string());
  }
  if (rank < 1 || rank > 8) {
    throw ValueError("unreasonable rank " + std::to_string(rank) + " in " + path.string());
  }
  std::vector<int> shape(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in || v == 0) throw ValueError("bad dimension in " + path.string());
    shape[static_cast<std::size_t>(i)] = static_cast<int>(v);
  }
  const std::int64_t n = shape_numel(shape);
  std::vector<double> values(static_cast<std::size_t>(n));
  if (dtype == 1) {
    std::vector<float> payload(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!in) throw ValueError("truncated payload in " + path.string());
    for (std::size_t i = 0; i < payload.size(); ++i) values[i] = payload[i];
  } else {
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw ValueError("truncated payload in " + path.string());
  }
  return Tensor::from_vector(shape, values);
}

}  // namespace cineseg
