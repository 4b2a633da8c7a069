#include "boxformer/random.hpp"

#include <vector>

namespace boxformer {

Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> salts) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto s : salts) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

Tensor randn(Shape shape, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Real> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<Real>(dist(rng));
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<Real> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<Real>(dist(rng));
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace boxformer
