#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace boxformer {

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0;
  bool passed = false;
};

constexpr double kGradCheckEps = 1e-5;
constexpr double kGradCheckTolerance = 1e-4;
/// Composite paths measure each element's error against at least this
/// fraction of the largest gradient component: deep networks have entries
/// many orders below the rest whose central difference is round-off bound.
constexpr double kCompositeScaleFloor = 1e-3;

/// Central-difference checks of every differentiable primitive on random
/// inputs with shapes up to 2x4x8x8. Trials cycle through the primitive
/// catalogue; one entry per (primitive, input) with the worst error seen.
std::vector<GradCheckEntry> primitive_grad_suite(std::uint64_t seed, int trials = 100);

/// Composite paths through the model: encoder -> aggregator -> generator
/// mean, the generator-side total loss w.r.t. a parameter slice, and a
/// discriminator logit w.r.t. its input.
std::vector<GradCheckEntry> composite_grad_suite(std::uint64_t seed);

}  // namespace boxformer
