#include <cmath>

#include "boxformer/grad_check.hpp"
#include "boxformer/grad_suite.hpp"
#include "boxformer/ops.hpp"
#include "boxformer/random.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace boxformer;
using boxformer::testing::bit_identical;
using boxformer::testing::dot;
using boxformer::testing::max_abs_diff;

namespace {

// Tent-kernel oracle: every pixel center contributes max(0, 1-|dx|) *
// max(0, 1-|dy|) after clamping the point to the span of pixel centers.
double bilinear_oracle(const Tensor& map, std::int64_t ch, double x, double y) {
  const auto h = map.dim(-2);
  const auto w = map.dim(-1);
  x = std::clamp(x, 0.5, static_cast<double>(w) - 0.5);
  y = std::clamp(y, 0.5, static_cast<double>(h) - 0.5);
  double total = 0;
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      const double wx = std::max(0.0, 1.0 - std::abs(x - (static_cast<double>(j) + 0.5)));
      const double wy = std::max(0.0, 1.0 - std::abs(y - (static_cast<double>(i) + 0.5)));
      total += wx * wy * map.data()[static_cast<std::size_t>((ch * h + i) * w + j)];
    }
  return total;
}

}  // namespace

TEST_CASE("conv2d of ones is a box sum") {
  const auto x = Tensor::full({1, 1, 3, 3}, 1.0);
  const auto k = Tensor::full({1, 1, 2, 2}, 1.0);
  const auto y = conv2d(x, k, {}, {});
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (Real v : y.data()) CHECK(v == 4.0);
}

TEST_CASE("reflect padding with a 1x1 kernel passes the interior through") {
  const auto x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto k = Tensor::full({1, 1, 1, 1}, 1.0);
  const auto y = conv2d(x, k, {}, {1, 1, PadMode::kReflect});
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  const auto interior = slice(slice(y, 2, 1, 2), 3, 1, 2);
  CHECK(bit_identical(reshape(interior, {1, 1, 2, 2}), x));
}

TEST_CASE("reflect padding matches pad-then-valid-conv reference") {
  Rng rng(7);
  const auto x = randn({1, 2, 5, 6}, rng);
  const auto k = randn({3, 2, 3, 3}, rng);
  const auto y = conv2d(x, k, {}, {1, 1, PadMode::kReflect});
  // Reference: explicit reflection then valid convolution with direct loops.
  const auto refl = [](std::int64_t i, std::int64_t n) { return i < 0 ? -i : (i >= n ? 2 * (n - 1) - i : i); };
  for (std::int64_t o = 0; o < 3; ++o)
    for (std::int64_t i = 0; i < 5; ++i)
      for (std::int64_t j = 0; j < 6; ++j) {
        double acc = 0;
        for (std::int64_t c = 0; c < 2; ++c)
          for (std::int64_t a = 0; a < 3; ++a)
            for (std::int64_t b = 0; b < 3; ++b)
              acc += k.data()[static_cast<std::size_t>(((o * 2 + c) * 3 + a) * 3 + b)] *
                     x.data()[static_cast<std::size_t>((c * 5 + refl(i + a - 1, 5)) * 6 + refl(j + b - 1, 6))];
        CHECK(std::abs(acc - y.data()[static_cast<std::size_t>((o * 5 + i) * 6 + j)]) < 1e-12);
      }
}

TEST_CASE("softmax is shift invariant and normalised") {
  for (double c : {-3.0, 0.0, 11.5}) {
    const auto y = softmax(Tensor::full({4}, c), 0);
    for (Real v : y.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  }
  Rng rng(3);
  const auto x = randn({3, 5, 7}, rng, 4.0);
  for (std::int64_t axis = 0; axis < 3; ++axis) {
    const auto s = sum(softmax(x, axis), {axis}, false);
    for (Real v : s.data()) CHECK(std::abs(v - 1.0) < 1e-12);
    const auto p = softmax(x, axis);
    for (Real v : p.data()) CHECK(v > 0.0);
  }
}

TEST_CASE("matmul with the identity returns the operand") {
  Rng rng(1);
  const auto a = randn({3, 3}, rng);
  const auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(bit_identical(matmul(eye, a), a));
}

TEST_CASE("backward on simple closed forms") {
  {
    Tape tape;
    TapeScope scope(tape);
    auto x = Tensor::from({3}, {1, -2, 3});
    x.set_requires_grad(true);
    const auto g = backward(sum(mul(x, x)));
    const auto gx = g.of(x).data();
    CHECK(gx[0] == 2.0);
    CHECK(gx[1] == -4.0);
    CHECK(gx[2] == 6.0);
    CHECK(tape.size() == 0);
  }
  {
    Tape tape;
    TapeScope scope(tape);
    auto x = Tensor::from({1}, {0});
    x.set_requires_grad(true);
    CHECK(backward(sum(tanh(x))).of(x).item() == 1.0);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  const auto b = randn({4, 5}, rng);
  const auto a = randn({3, 4}, rng);
  const double err = grad_check([&](const Tensor& x) { return sum(matmul(x, b)); }, a, 1e-5);
  CHECK(err < 1e-8);
  // d/dA sum(AB) = 1 B^T: every row equals the row sums of B.
  Tape tape;
  TapeScope scope(tape);
  auto leaf = a.clone();
  leaf.set_requires_grad(true);
  const auto g = backward(sum(matmul(leaf, b))).of(leaf);
  for (std::int64_t i = 0; i < 3; ++i)
    for (std::int64_t k = 0; k < 4; ++k) {
      double row = 0;
      for (std::int64_t j = 0; j < 5; ++j) row += b.data()[static_cast<std::size_t>(k * 5 + j)];
      CHECK(std::abs(g.data()[static_cast<std::size_t>(i * 4 + k)] - row) < 1e-12);
    }
}

TEST_CASE("gradients accumulate across consumers and only reach tracked leaves") {
  Tape tape;
  TapeScope scope(tape);
  auto x = Tensor::from({2}, {1.5, -0.5});
  x.set_requires_grad(true);
  const auto constant = Tensor::from({2}, {2, 3});
  const auto y = add(mul(x, constant), scale(x, 4.0));
  const auto g = backward(sum(y));
  CHECK(g.size() == 1);
  CHECK(g.of(x).data()[0] == 6.0);
  CHECK(g.of(x).data()[1] == 7.0);
  CHECK_FALSE(g.has(constant));
}

TEST_CASE("backward error paths") {
  Tape tape;
  TapeScope scope(tape);
  auto x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  CHECK_THROWS_AS(backward(mul(x, x)), AutogradError);
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), AutogradError);
  Tensor detached;
  {
    NoGradScope off;
    detached = sum(mul(x, x));
  }
  CHECK_THROWS_AS(backward(detached), AutogradError);
}

TEST_CASE("interior tensors from a consumed tape must be detached") {
  Tape first;
  Tensor y;
  auto x = Tensor::from({2}, {1, 2});
  x.set_requires_grad(true);
  {
    TapeScope scope(first);
    y = mul(x, x);
  }
  Tape second;
  TapeScope scope(second);
  CHECK_THROWS_AS(sum(y), AutogradError);
  CHECK_NOTHROW(sum(y.detach()));
}

TEST_CASE("shape errors name the op and both shapes") {
  const auto a = Tensor::zeros({2, 3});
  const auto b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected throw");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(op_kind_from_string("frobnicate"), UnknownOpError);
}

TEST_CASE("non-finite outputs are rejected in debug mode") {
  const bool saved = debug_checks();
  set_debug_checks(true);
  CHECK_THROWS_AS(log(Tensor::from({2}, {1.0, 0.0})), NumericError);
  set_debug_checks(false);
  CHECK_NOTHROW(log(Tensor::from({2}, {1.0, 0.0})));
  set_debug_checks(saved);
}

TEST_CASE("bilinear sampling") {
  const auto constant = Tensor::full({1, 3, 4}, 7.0);
  const std::vector<Point2> pts{{0.2, 0.1}, {3.9, 2.7}, {-5, 40}};
  const auto sampled = bilinear_sample(constant, pts);
  for (Real v : sampled.data()) CHECK(v == doctest::Approx(7.0).epsilon(1e-15));

  const auto row = Tensor::from({1, 1, 2}, {0, 1});
  const std::vector<Point2> mid{{1.0, 0.5}};
  CHECK(bilinear_sample(row, mid).item() == 0.5);

  CHECK_THROWS_AS(bilinear_sample(row, std::vector<Point2>{}), ShapeError);

  Rng rng(20);
  const auto map = randn({1, 4, 4}, rng);
  std::uniform_real_distribution<double> u(-0.5, 4.5);
  std::vector<Point2> random_pts;
  for (int i = 0; i < 20; ++i) random_pts.push_back({u(rng), u(rng)});
  const auto s = bilinear_sample(map, random_pts);
  for (std::size_t i = 0; i < random_pts.size(); ++i) {
    CHECK(std::abs(s.data()[i] - bilinear_oracle(map, 0, random_pts[i].x, random_pts[i].y)) < 1e-12);
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  Rng rng(5);
  struct Geo {
    std::int64_t k, stride, pad, outpad, h;
  };
  for (const auto& g : {Geo{3, 2, 1, 1, 8}, Geo{4, 2, 1, 0, 8}, Geo{3, 1, 1, 0, 6}, Geo{2, 2, 0, 0, 6}}) {
    const auto w = randn({5, 3, g.k, g.k}, rng);
    const auto x = randn({2, 3, g.h, g.h}, rng);
    const auto y = conv2d(x, w, {}, {g.stride, g.pad, PadMode::kZeros});
    const auto r = randn(y.shape(), rng);
    const auto back = conv_transpose2d(r, w, {}, {g.stride, g.pad, g.outpad});
    REQUIRE(back.shape() == x.shape());
    CHECK(std::abs(dot(y, r) - dot(x, back)) < 1e-10);
  }
}

TEST_CASE("ops are bit-deterministic") {
  auto run = [] {
    Rng rng(99);
    const auto x = randn({2, 3, 8, 8}, rng);
    const auto w = randn({4, 3, 3, 3}, rng);
    auto y = gelu(conv2d(x, w, {}, {2, 1, PadMode::kReflect}));
    y = softmax(reshape(y, {2, 4, 16}), 2);
    return var(y, {2}, true);
  };
  CHECK(bit_identical(run(), run()));
}

TEST_CASE("grad_check is exact on a quadratic") {
  Rng rng(4);
  const auto x = randn({2, 3, 4}, rng);
  CHECK(grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x, 1e-5) < 1e-8);
  CHECK_THROWS(grad_check([](const Tensor& t) { return mul(t, t); }, x, 1e-5));
}

TEST_CASE("every primitive passes the randomized gradient suite") {
  const auto entries = primitive_grad_suite(2024, 100);
  CHECK(entries.size() >= all_op_kinds().size());
  for (const auto& e : entries) {
    INFO(e.name << " max relative error " << e.max_relative_error);
    CHECK(e.passed);
  }
}

TEST_CASE("primitive dispatch by kind") {
  const auto x = Tensor::from({1, 4}, {1, 2, 3, 4});
  const auto y = primitive_forward(OpKind::kSlice, {x}, {{"axis", std::int64_t{1}}, {"start", std::int64_t{1}}, {"length", std::int64_t{2}}});
  CHECK(y.data()[0] == 2.0);
  CHECK(y.data()[1] == 3.0);
  for (auto kind : all_op_kinds()) CHECK(op_kind_from_string(to_string(kind)) == kind);
}
