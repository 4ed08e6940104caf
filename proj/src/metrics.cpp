#include "cineseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cineseg {

namespace {

constexpr double kDiceEps = 1e-5;

void check_binary(const char* op, const Tensor& m) {
  const std::int64_t n = m.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = m.at(i);
    if (v != 0.0 && v != 1.0) {
      throw ValueError(std::string(op) + ": mask is not binary (value " + std::to_string(v) +
                       " at index " + std::to_string(i) + ")");
    }
  }
}

struct Point {
  double x, y;
};

std::vector<Point> foreground(const Tensor& m) {
  const int h = m.dim(0), w = m.dim(1);
  std::vector<Point> pts;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (m.at(static_cast<std::int64_t>(y) * w + x) != 0.0) {
        pts.push_back({double(x), double(y)});
      }
    }
  }
  return pts;
}

// directed nearest distances from each point of a to the set b
std::vector<double> directed_distances(const std::vector<Point>& a, const std::vector<Point>& b) {
  std::vector<double> out;
  out.reserve(a.size());
  for (const Point& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const Point& q : b) {
      const double dx = p.x - q.x, dy = p.y - q.y;
      best = std::min(best, dx * dx + dy * dy);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

// linear-interpolation percentile of a sorted sample; p = 100 is the max
double percentile_sorted(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  const double pos = (p / 100.0) * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace

double dice_score(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("dice_score: " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  }
  check_binary("dice_score", pred);
  check_binary("dice_score", gt);
  double inter = 0, pa = 0, ga = 0;
  const std::int64_t n = pred.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = pred.at(i), g = gt.at(i);
    inter += p * g;
    pa += p;
    ga += g;
  }
  return (2.0 * inter + kDiceEps) / (pa + ga + kDiceEps);
}

double hausdorff(const Tensor& pred, const Tensor& gt, double percentile) {
  if (pred.rank() != 2 || gt.rank() != 2 || pred.shape() != gt.shape()) {
    throw ShapeError("hausdorff: masks must be equal-shape [H,W], got " + shape_str(pred.shape()) +
                     " vs " + shape_str(gt.shape()));
  }
  if (percentile <= 0.0 || percentile > 100.0) {
    throw ValueError("hausdorff: percentile must lie in (0, 100]");
  }
  check_binary("hausdorff", pred);
  check_binary("hausdorff", gt);
  const auto a = foreground(pred);
  const auto b = foreground(gt);
  if (a.empty() || b.empty()) throw ValueError("hausdorff undefined: empty mask");
  const double fwd = percentile_sorted(directed_distances(a, b), percentile);
  const double bwd = percentile_sorted(directed_distances(b, a), percentile);
  return std::max(fwd, bwd);
}

double endpoint_error(const Tensor& flow, const Tensor& gt_flow, const Tensor& mask) {
  if (flow.shape() != gt_flow.shape()) {
    throw ShapeError("endpoint_error: " + shape_str(flow.shape()) + " vs " +
                     shape_str(gt_flow.shape()));
  }
  if (flow.rank() != 3 || flow.dim(0) != 2) {
    throw ShapeError("endpoint_error: flow must be [2,H,W], got " + shape_str(flow.shape()));
  }
  const std::int64_t hw = static_cast<std::int64_t>(flow.dim(1)) * flow.dim(2);
  if (mask.defined() && mask.numel() != hw) {
    throw ShapeError("endpoint_error: mask " + shape_str(mask.shape()) + " vs flow " +
                     shape_str(flow.shape()));
  }
  double acc = 0;
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < hw; ++i) {
    if (mask.defined() && mask.at(i) <= 0.5) continue;
    const double dx = flow.at(i) - gt_flow.at(i);
    const double dy = flow.at(hw + i) - gt_flow.at(hw + i);
    acc += std::sqrt(dx * dx + dy * dy);
    ++count;
  }
  if (count == 0) throw ValueError("endpoint_error: empty mask");
  return acc / static_cast<double>(count);
}

Aggregate aggregate(const std::vector<double>& values) {
  if (values.empty()) throw ValueError("aggregate: empty value list");
  Aggregate a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - a.mean) * (v - a.mean);
  a.sd = std::sqrt(var / static_cast<double>(values.size()));
  return a;
}

}  // namespace cineseg
