#pragma once

#include <vector>

#include "boxformer/data.hpp"

namespace boxformer {

struct SsimConfig {
  std::int64_t window = 8;
  double dynamic_range = 2.0;  // L for images in [-1, 1]
  double k1 = 0.01;
  double k2 = 0.03;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

/// Mean over valid stride-1 uniform windows and over channels. a, b: [C,H,W].
double ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg = {});

/// Mean ssim over box crops. Boxes smaller than the window are skipped;
/// throws std::invalid_argument if none remain.
double instance_ssim(const Tensor& a, const Tensor& b, const std::vector<BoundingBox>& boxes,
                     const SsimConfig& cfg = {});

/// Integer pixel crop covering the box: [3, h, w].
Tensor crop_box(const Tensor& image, const BoundingBox& box);

/// L2 distance between the image's per-channel mean/std and the domain's
/// background statistics.
double palette_distance(const Tensor& image, Domain domain);

}  // namespace boxformer
