#include <cmath>

#include "boxformer/data.hpp"
#include "boxformer/metrics.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace boxformer;

namespace {

// SSIM from integral images of x, y, x^2, y^2 and xy.
double ssim_oracle(const Tensor& a, const Tensor& b, std::int64_t win = 8, double range = 2.0) {
  const auto ch = a.dim(0), h = a.dim(1), w = a.dim(2);
  const long double c1 = std::pow(0.01L * range, 2), c2 = std::pow(0.03L * range, 2);
  long double total = 0;
  for (std::int64_t c = 0; c < ch; ++c) {
    std::vector<std::array<long double, 5>> s(static_cast<std::size_t>((h + 1) * (w + 1)), {0, 0, 0, 0, 0});
    auto at = [&](std::int64_t y, std::int64_t x) -> auto& { return s[static_cast<std::size_t>(y * (w + 1) + x)]; };
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const long double va = a.data()[static_cast<std::size_t>((c * h + y) * w + x)];
        const long double vb = b.data()[static_cast<std::size_t>((c * h + y) * w + x)];
        const std::array<long double, 5> v{va, vb, va * va, vb * vb, va * vb};
        for (int k = 0; k < 5; ++k) at(y + 1, x + 1)[k] = v[k] + at(y, x + 1)[k] + at(y + 1, x)[k] - at(y, x)[k];
      }
    const long double n = static_cast<long double>(win * win);
    for (std::int64_t y = 0; y + win <= h; ++y)
      for (std::int64_t x = 0; x + win <= w; ++x) {
        std::array<long double, 5> m{};
        for (int k = 0; k < 5; ++k)
          m[k] = (at(y + win, x + win)[k] - at(y, x + win)[k] - at(y + win, x)[k] + at(y, x)[k]) / n;
        const long double va = m[2] - m[0] * m[0], vb = m[3] - m[1] * m[1], cov = m[4] - m[0] * m[1];
        total += (2 * m[0] * m[1] + c1) * (2 * cov + c2) / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
      }
  }
  return static_cast<double>(total / static_cast<long double>((h - win + 1) * (w - win + 1) * ch));
}

Tensor flip_horizontal(const Tensor& img) {
  const auto c = img.dim(0), h = img.dim(1), w = img.dim(2);
  std::vector<Real> out(img.data().begin(), img.data().end());
  for (std::int64_t k = 0; k < c; ++k)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        out[static_cast<std::size_t>((k * h + y) * w + x)] = img.data()[static_cast<std::size_t>((k * h + y) * w + w - 1 - x)];
  return Tensor::from(img.shape(), out);
}

}  // namespace

TEST_CASE("ssim of constant images follows the luminance closed form") {
  const auto a = Tensor::zeros({3, 16, 16});
  const auto b = Tensor::full({3, 16, 16}, 0.5);
  const double c1 = 0.0004;
  const double expect = c1 / (0.25 + c1);
  CHECK(expect == doctest::Approx(0.001597).epsilon(1e-3));
  CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ssim identity, symmetry and range") {
  Rng rng = derive_rng(1, {1});
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = rand_uniform({3, 20, 24}, rng, -1, 1);
    const auto b = rand_uniform({3, 20, 24}, rng, -1, 1);
    CHECK(ssim(a, a) == 1.0);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));
    CHECK(ssim(a, b) >= -1);
    CHECK(ssim(a, b) <= 1);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-10);
    const auto neg = scale(a, -1);
    CHECK(std::abs(ssim(a, neg) - ssim_oracle(a, neg)) < 1e-10);
  }
  CHECK_THROWS_AS(ssim(Tensor::zeros({3, 7, 20}), Tensor::zeros({3, 7, 20})), ShapeError);
  CHECK_THROWS_AS(ssim(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 9})), ShapeError);
}

TEST_CASE("instance ssim depends only on box pixels") {
  Rng rng = derive_rng(2, {1});
  const auto a = rand_uniform({3, 64, 64}, rng, -1, 1);
  const auto b = rand_uniform({3, 64, 64}, rng, -1, 1);
  const std::vector<BoundingBox> boxes{{16, 16, 20, 12}, {45, 44, 14, 18}};
  const double base = instance_ssim(a, b, boxes);
  CHECK(instance_ssim(a, a, boxes) == 1.0);

  std::vector<Real> outside(b.data().begin(), b.data().end());
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < 64; ++y)
      for (std::int64_t x = 0; x < 64; ++x) {
        const bool in0 = x >= 6 && x < 26 && y >= 10 && y < 22;
        const bool in1 = x >= 38 && x < 52 && y >= 35 && y < 53;
        if (!in0 && !in1) outside[static_cast<std::size_t>((c * 64 + y) * 64 + x)] = 0.9;
      }
  CHECK(instance_ssim(a, Tensor::from({3, 64, 64}, outside), boxes) == base);

  const double each = (ssim(crop_box(a, boxes[0]), crop_box(b, boxes[0])) +
                       ssim(crop_box(a, boxes[1]), crop_box(b, boxes[1]))) / 2;
  CHECK(base == doctest::Approx(each).epsilon(1e-14));
  CHECK(instance_ssim(a, b, {{32, 32, 64, 64}}) == ssim(a, b));
  CHECK(crop_box(a, boxes[0]).shape() == Shape{3, 12, 20});
  CHECK_THROWS_AS(instance_ssim(a, b, {{32, 32, 4, 4}}), std::invalid_argument);
  CHECK_THROWS_AS(instance_ssim(a, b, {}), std::invalid_argument);
}

TEST_CASE("palette distance separates the domains") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = gen_scene({seed, 64, 2, Domain::kA});
    const auto b = gen_scene({seed, 64, 2, Domain::kB});
    CHECK(palette_distance(b.image, Domain::kB) < palette_distance(b.image, Domain::kA));
    CHECK(palette_distance(a.image, Domain::kA) < palette_distance(a.image, Domain::kB));
    CHECK(palette_distance(a.image, Domain::kB) ==
          doctest::Approx(palette_distance(flip_horizontal(a.image), Domain::kB)).epsilon(1e-12));
  }
  const auto empty = gen_scene({3, 64, 0, Domain::kB});
  CHECK(palette_distance(empty.image, Domain::kB) < 1e-12);
}
