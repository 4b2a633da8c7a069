#include <cmath>
#include <set>

#include "boxformer/data.hpp"
#include "boxformer/model.hpp"
#include "boxformer/shape_walk.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace boxformer;
using boxformer::testing::bit_identical;
using boxformer::testing::max_abs_diff;

namespace {

Tensor* param(Model& m, const std::string& name) {
  for (auto& p : m.all_params())
    if (p.name == name) return p.tensor;
  FAIL("missing parameter " << name);
  return nullptr;
}

// Reflect pad by explicit index mirroring, independent of the conv kernel.
Tensor reflect_pad(const Tensor& x, std::int64_t p) {
  const auto b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto hp = h + 2 * p, wp = w + 2 * p;
  std::vector<Real> out(static_cast<std::size_t>(b * c * hp * wp));
  auto mirror = [](std::int64_t i, std::int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  for (std::int64_t n = 0; n < b * c; ++n)
    for (std::int64_t i = 0; i < hp; ++i)
      for (std::int64_t j = 0; j < wp; ++j) {
        out[static_cast<std::size_t>((n * hp + i) * wp + j)] =
            x.data()[static_cast<std::size_t>((n * h + mirror(i - p, h)) * w + mirror(j - p, w))];
      }
  return Tensor::from({b, c, hp, wp}, std::move(out));
}

// Direct valid convolution loop.
Tensor conv_valid(const Tensor& x, const Tensor& wt, const Tensor& bias, std::int64_t pad_zeros = 0) {
  const auto b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto o = wt.dim(0), k = wt.dim(2);
  const auto oh = h + 2 * pad_zeros - k + 1, ow = w + 2 * pad_zeros - k + 1;
  std::vector<Real> out(static_cast<std::size_t>(b * o * oh * ow));
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t q = 0; q < o; ++q)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double s = bias.data()[static_cast<std::size_t>(q)];
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t u = 0; u < k; ++u)
              for (std::int64_t v = 0; v < k; ++v) {
                const auto y = i + u - pad_zeros, xx = j + v - pad_zeros;
                if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
                s += wt.data()[static_cast<std::size_t>(((q * c + ci) * k + u) * k + v)] *
                     x.data()[static_cast<std::size_t>(((n * c + ci) * h + y) * w + xx)];
              }
          out[static_cast<std::size_t>(((n * o + q) * oh + i) * ow + j)] = static_cast<Real>(s);
        }
  return Tensor::from({b, o, oh, ow}, std::move(out));
}

Model desk_model(std::uint64_t seed = 0) { return Model(ModelConfig{}, seed); }

}  // namespace

TEST_CASE("desk shapes through every network") {
  auto model = desk_model();
  Rng rng = derive_rng(1, {1});
  const auto x = rand_uniform({2, 3, 64, 64}, rng, -1, 1);
  const auto f = model.content_encoder.features(x);
  CHECK(f.conv1.shape() == Shape{2, 16, 64, 64});
  CHECK(f.conv2.shape() == Shape{2, 32, 64, 64});
  CHECK(f.content.shape() == Shape{2, 64, 16, 16});
  CHECK(model.style_encoder(x).shape() == Shape{2, 8});
  CHECK(model.generator(f.content).shape() == Shape{2, 3, 64, 64});
  CHECK(model.discriminator(x).shape() == Shape{2, 1, 6, 6});
}

TEST_CASE("discriminator output size follows conv arithmetic") {
  // (n + 2p - k) / s + 1 applied stage by stage.
  auto oracle = [](std::int64_t n) {
    for (int i = 0; i < 3; ++i) n = (n + 2 - 4) / 2 + 1;
    n = (n + 2 - 4) + 1;
    return (n + 2 - 4) + 1;
  };
  CHECK(oracle(64) == 6);
  for (std::int64_t n : {32, 64, 96, 128, 352}) CHECK(Discriminator::output_size(n) == oracle(n));
}

TEST_CASE("encoder conv1 uses reflection padding and conv2 zero padding") {
  auto model = desk_model(3);
  Rng rng = derive_rng(2, {1});
  const auto x = rand_uniform({1, 3, 16, 16}, rng, -1, 1);
  const auto f = model.content_encoder.features(x);
  const auto c1 = conv_valid(reflect_pad(x, 3), *param(model, "content_encoder.conv1.weight"),
                             *param(model, "content_encoder.conv1.bias"));
  const auto ref1 = relu(instance_normalize(c1));
  CHECK(max_abs_diff(f.conv1, ref1) < 1e-12);
  const auto c2 = conv_valid(ref1, *param(model, "content_encoder.conv2.weight"),
                             *param(model, "content_encoder.conv2.bias"), 1);
  CHECK(max_abs_diff(f.conv2, relu(instance_normalize(c2))) < 1e-12);
}

TEST_CASE("zero image gives finite, zero-mean content") {
  auto model = desk_model();
  const auto c = model.content_encoder(Tensor::zeros({1, 3, 64, 64}));
  for (Real v : c.data()) CHECK(std::isfinite(v));
  const auto m = mean(c, {2, 3}, false);
  for (Real v : m.data()) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("instance norm whitens every sample and channel") {
  Rng rng = derive_rng(4, {1});
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = add(scale(randn({2, 5, 9, 7}, rng), 3.0), randn({2, 5, 1, 1}, rng, 10.0));
    const auto y = instance_normalize(x);
    const auto mu = mean(y, {2, 3}, false);
    const auto sd = sqrt(var(y, {2, 3}, false));
    for (Real v : mu.data()) CHECK(std::abs(v) < 1e-6);
    for (Real v : sd.data()) CHECK(std::abs(v - 1) < 1e-5);
  }
}

TEST_CASE("generator output stays strictly inside (-1, 1)") {
  auto model = desk_model();
  Rng rng = derive_rng(5, {1});
  const auto y = model.generator(randn({1, 64, 16, 16}, rng, 100.0));
  for (Real v : y.data()) {
    CHECK(v > -1);
    CHECK(v < 1);
  }
}

TEST_CASE("networks are pure functions of input and parameters") {
  auto a = desk_model(9);
  auto b = desk_model(9);
  Rng rng = derive_rng(6, {1});
  const auto x = rand_uniform({1, 3, 64, 64}, rng, -1, 1);
  CHECK(bit_identical(a.content_encoder(x), a.content_encoder(x)));
  CHECK(bit_identical(a.content_encoder(x), b.content_encoder(x)));
  CHECK(bit_identical(a.style_encoder(x), b.style_encoder(x)));
  CHECK(bit_identical(a.discriminator(x), b.discriminator(x)));
  const auto c = a.content_encoder(x);
  CHECK(bit_identical(a.generator(c), b.generator(c)));
  auto other = desk_model(10);
  CHECK_FALSE(bit_identical(a.content_encoder(x), other.content_encoder(x)));
}

TEST_CASE("discriminator with zero weights emits its final bias") {
  auto model = desk_model();
  for (auto& p : model.discriminator_params())
    for (auto& v : p.tensor->mutable_data()) v = 0;
  param(model, "discriminator.conv5.bias")->mutable_data()[0] = 0.37;
  // Instance-norm affine terms back to identity.
  for (auto& p : model.discriminator_params())
    if (p.name.find("norm") != std::string::npos && p.name.find("weight") != std::string::npos)
      for (auto& v : p.tensor->mutable_data()) v = 1;
  Rng rng = derive_rng(7, {1});
  const auto d = model.discriminator(rand_uniform({1, 3, 64, 64}, rng, -1, 1));
  for (Real v : d.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));
}

TEST_CASE("shape errors name the problem") {
  auto model = desk_model();
  CHECK_THROWS_AS(model.content_encoder(Tensor::zeros({1, 4, 64, 64})), ShapeError);
  CHECK_THROWS_AS(model.content_encoder(Tensor::zeros({1, 3, 62, 64})), ShapeError);
  CHECK_THROWS_AS(model.generator(Tensor::zeros({1, 32, 16, 16})), ShapeError);
  CHECK_THROWS_AS(model.discriminator(Tensor::zeros({1, 3, 16, 16})), ShapeError);
  BackboneConfig bad;
  bad.image_size = 62;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("divisible by 4"), std::invalid_argument);
}

TEST_CASE("sample_style draws standard normals deterministically") {
  Rng a = derive_rng(11, {1});
  Rng b = derive_rng(11, {1});
  const auto s1 = sample_style(a, 8, 1);
  CHECK(s1.shape() == Shape{1, 8});
  CHECK(bit_identical(s1, sample_style(b, 8, 1)));
  const auto many = sample_style(a, 8, 10000);
  const auto mu = mean(many, {0}, false);
  const auto v = var(many, {0}, false);
  for (Real m : mu.data()) CHECK(std::abs(m) < 0.05);
  for (Real x : v.data()) {
    CHECK(x > 0.94);
    CHECK(x < 1.06);
  }
}

TEST_CASE("style code barely moves under a cyclic roll of a smooth image") {
  auto model = desk_model(12);
  const auto sample = gen_scene({12, 64, 2, Domain::kA});
  const auto& img = sample.image;
  std::vector<Real> rolled(img.data().begin(), img.data().end());
  const std::int64_t shift = 5;
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < 64; ++y)
      for (std::int64_t x = 0; x < 64; ++x)
        rolled[static_cast<std::size_t>((c * 64 + y) * 64 + (x + shift) % 64)] =
            img.data()[static_cast<std::size_t>((c * 64 + y) * 64 + x)];
  const auto s0 = model.style_encoder(reshape(img, {1, 3, 64, 64}));
  const auto s1 = model.style_encoder(Tensor::from({1, 3, 64, 64}, rolled));
  double sq = 0;
  for (std::size_t i = 0; i < 8; ++i) sq += std::pow(s0.data()[i] - s1.data()[i], 2);
  CHECK(std::sqrt(sq / 8) < 0.05);
}

TEST_CASE("parameter names are unique dotted paths") {
  auto model = desk_model();
  std::set<std::string> names;
  for (const auto& p : model.all_params()) CHECK(names.insert(p.name).second);
  for (const char* n : {"content_encoder.conv1.weight", "style_encoder.conv4.weight", "generator.conv3.bias",
                        "discriminator.conv5.weight", "aggregator.blocks.0.qkv.weight", "nce_heads.0.fc1.weight",
                        "instance_head.fc2.bias"})
    CHECK(names.count(n) == 1);
  CHECK(model.generator_params().size() + model.discriminator_params().size() == model.all_params().size());
}

TEST_CASE("desk shape walk agrees with the constructed model") {
  const ModelConfig cfg;
  auto model = Model(cfg, 0);
  std::map<std::string, Shape> shapes;
  for (const auto& p : model.all_params()) shapes[p.name] = p.tensor->shape();
  for (const auto& r : shape_walk(cfg)) {
    if (r.weight.empty()) continue;
    INFO(r.network << " " << r.layer);
    REQUIRE(shapes.count(r.weight) == 1);
    CHECK(shapes[r.weight] == r.weight_shape);
  }
  Rng rng = derive_rng(13, {1});
  const auto x = rand_uniform({1, 3, 64, 64}, rng, -1, 1);
  const auto f = model.content_encoder.features(x);
  auto find = [&](const std::string& net, const std::string& layer) {
    Shape last;
    for (const auto& r : shape_walk(cfg))
      if (r.network == net && r.layer == layer) last = r.output;
    return last;
  };
  CHECK(find("Encoder", "Conv-1 (Reflection)") == Shape{16, 64, 64});
  CHECK(find("Encoder", "DownSample") == Shape{f.content.dim(1), f.content.dim(2), f.content.dim(3)});
  CHECK(find("Style", "Conv-4") == Shape{8, 1, 1});
  CHECK(find("Generator", "Tanh") == Shape{3, 64, 64});
  CHECK(find("Discriminator", "Conv-5") == Shape{1, 6, 6});
}
