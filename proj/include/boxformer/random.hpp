#pragma once

#include <cstdint>
#include <random>

#include "boxformer/tensor.hpp"

namespace boxformer {

using Rng = std::mt19937_64;

/// Deterministic child stream derived from a seed and a list of salts.
Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> salts);

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi);

}  // namespace boxformer
