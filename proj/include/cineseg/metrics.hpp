#pragma once

#include <vector>

#include "cineseg/tensor.hpp"

namespace cineseg {

// Overlap of two binary masks: (2|A∩B| + eps) / (|A| + |B| + eps), eps = 1e-5.
// Inputs must be strictly binary.
double dice_score(const Tensor& pred, const Tensor& gt);

// Symmetric directed-distance Hausdorff over foreground pixel centers
// (Euclidean, brute force). percentile = 100 gives the classic distance,
// 95 the HD95 variant (linear-interpolation percentile per direction, then
// the max of the two directions). Empty masks are an error, never a 0.
double hausdorff(const Tensor& pred, const Tensor& gt, double percentile = 100.0);

// Mean Euclidean distance between flow vectors, in pixels; restricted to
// mask > 0.5 when a mask is given. flow/gt: [2,H,W].
double endpoint_error(const Tensor& flow, const Tensor& gt_flow, const Tensor& mask = Tensor());

struct Aggregate {
  double mean = 0.0;
  double sd = 0.0;  // population standard deviation
};

Aggregate aggregate(const std::vector<double>& values);

}  // namespace cineseg
