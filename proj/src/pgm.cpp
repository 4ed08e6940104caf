#include "cineseg/pgm.hpp"

#include <algorithm>
#include <fstream>

#include "cineseg/ops.hpp"

namespace cineseg {

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) {
    throw ShapeError("write_pgm: image must be [H,W], got " + shape_str(image.shape()));
  }
  const int h = image.dim(0), w = image.dim(1);
  const auto v = image.to_vector();
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValueError("cannot write " + path.string());
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double val = v[static_cast<std::size_t>(y) * w + x];
      row[static_cast<std::size_t>(x)] =
          scale > 0 ? static_cast<unsigned char>((val - lo) * scale + 0.5)
                    : static_cast<unsigned char>(128);
    }
    out.write(reinterpret_cast<const char*>(row.data()), w);
  }
}

void write_flow_pgms(const std::filesystem::path& stem, const Tensor& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2) {
    throw ShapeError("write_flow_pgms: flow must be [2,H,W], got " + shape_str(flow.shape()));
  }
  const int h = flow.dim(1), w = flow.dim(2);
  std::filesystem::path dx = stem;
  dx += "_dx.pgm";
  std::filesystem::path dy = stem;
  dy += "_dy.pgm";
  write_pgm(dx, reshape(slice(flow, 0, 0, 1), {h, w}));
  write_pgm(dy, reshape(slice(flow, 0, 1, 1), {h, w}));
}

}  // namespace cineseg
