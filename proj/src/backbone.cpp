#include "boxformer/backbone.hpp"

#include <stdexcept>

namespace boxformer {

namespace {

const Conv2dOptions kReflect3{1, 3, PadMode::kReflect};
const Conv2dOptions kZeros1{1, 1, PadMode::kZeros};

void check_image(const char* who, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw ShapeError(std::string(who) + ": expected [B,3,H,W], got " + to_string(x.shape()));
  }
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw ShapeError(std::string(who) + ": H and W must be divisible by 4, got " + to_string(x.shape()));
  }
}

}  // namespace

BackboneConfig BackboneConfig::paper() { return {352, 64, 256, 8}; }

void BackboneConfig::validate() const {
  if (image_size <= 0 || image_size % 4 != 0) throw std::invalid_argument("image_size must be divisible by 4");
  if (base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
  if (content_channels < 1) throw std::invalid_argument("content_channels must be >= 1");
  if (style_dim < 1) throw std::invalid_argument("style_dim must be >= 1");
}

EncoderTrunk::EncoderTrunk(const BackboneConfig& cfg, Rng& rng)
    : conv1(3, cfg.base_channels, 7, kReflect3, rng),
      conv2(cfg.base_channels, 2 * cfg.base_channels, 3, kZeros1, rng),
      conv3(2 * cfg.base_channels, cfg.content_channels, 3, kZeros1, rng),
      norm1(cfg.base_channels),
      norm2(2 * cfg.base_channels),
      norm3(cfg.content_channels) {}

EncoderFeatures EncoderTrunk::features(const Tensor& x) const {
  check_image("encoder", x);
  EncoderFeatures f;
  f.conv1 = relu(norm1(conv1(x)));
  f.conv2 = relu(norm2(conv2(f.conv1)));
  f.content = avg_pool2x2(relu(norm3(conv3(avg_pool2x2(f.conv2)))));
  return f;
}

void EncoderTrunk::collect(const std::string& prefix, ParamList& out) {
  conv1.collect(join_name(prefix, "conv1"), out);
  norm1.collect(join_name(prefix, "norm1"), out);
  conv2.collect(join_name(prefix, "conv2"), out);
  norm2.collect(join_name(prefix, "norm2"), out);
  conv3.collect(join_name(prefix, "conv3"), out);
  norm3.collect(join_name(prefix, "norm3"), out);
}

ContentEncoder::ContentEncoder(const BackboneConfig& cfg, Rng& rng) : trunk_(cfg, rng) {}

EncoderFeatures ContentEncoder::features(const Tensor& x) const { return trunk_.features(x); }

StyleEncoder::StyleEncoder(const BackboneConfig& cfg, Rng& rng)
    : trunk_(cfg, rng), conv4_(cfg.content_channels, cfg.style_dim, 1, {}, rng) {}

Tensor StyleEncoder::operator()(const Tensor& x) const {
  const auto pooled = mean(trunk_.features(x).content, {2, 3}, true);
  const auto code = conv4_(pooled);
  return reshape(code, {code.dim(0), code.dim(1)});
}

void StyleEncoder::collect(const std::string& prefix, ParamList& out) {
  trunk_.collect(prefix, out);
  conv4_.collect(join_name(prefix, "conv4"), out);
}

Tensor sample_style(Rng& rng, std::int64_t style_dim, std::int64_t batch) {
  return randn({batch, style_dim}, rng);
}

Generator::Generator(const BackboneConfig& cfg, Rng& rng)
    : conv1_(cfg.content_channels, 2 * cfg.base_channels, 3, kZeros1, rng),
      conv2_(2 * cfg.base_channels, cfg.base_channels, 3, kZeros1, rng),
      conv3_(cfg.base_channels, 3, 7, kReflect3, rng),
      norm1_(2 * cfg.base_channels),
      norm2_(cfg.base_channels) {}

Tensor Generator::operator()(const Tensor& u) const {
  if (u.rank() != 4 || u.dim(1) != conv1_.weight.dim(1)) {
    throw ShapeError("generator: expected [B," + std::to_string(conv1_.weight.dim(1)) + ",h,w], got " +
                     to_string(u.shape()));
  }
  auto h = relu(norm1_(conv1_(upsample_nearest2x(u))));
  h = relu(norm2_(conv2_(upsample_nearest2x(h))));
  return tanh(conv3_(h));
}

void Generator::collect(const std::string& prefix, ParamList& out) {
  conv1_.collect(join_name(prefix, "conv1"), out);
  norm1_.collect(join_name(prefix, "norm1"), out);
  conv2_.collect(join_name(prefix, "conv2"), out);
  norm2_.collect(join_name(prefix, "norm2"), out);
  conv3_.collect(join_name(prefix, "conv3"), out);
}

Discriminator::Discriminator(const BackboneConfig& cfg, Rng& rng)
    : conv1_(3, cfg.base_channels, 4, {2, 1}, rng),
      conv2_(cfg.base_channels, 2 * cfg.base_channels, 4, {2, 1}, rng),
      conv3_(2 * cfg.base_channels, 4 * cfg.base_channels, 4, {2, 1}, rng),
      conv4_(4 * cfg.base_channels, 8 * cfg.base_channels, 4, {1, 1}, rng),
      conv5_(8 * cfg.base_channels, 1, 4, {1, 1}, rng),
      norm2_(2 * cfg.base_channels),
      norm3_(4 * cfg.base_channels),
      norm4_(8 * cfg.base_channels) {}

std::int64_t Discriminator::output_size(std::int64_t image_size) {
  auto s = image_size;
  for (int i = 0; i < 3; ++i) s = conv_out_size(s, 4, 2, 1);
  s = conv_out_size(s, 4, 1, 1);
  return conv_out_size(s, 4, 1, 1);
}

Tensor Discriminator::operator()(const Tensor& img) const {
  if (img.rank() != 4 || img.dim(1) != 3) {
    throw ShapeError("discriminator: expected [B,3,H,W], got " + to_string(img.shape()));
  }
  if (output_size(img.dim(2)) < 1 || output_size(img.dim(3)) < 1) {
    throw ShapeError("discriminator: image " + to_string(img.shape()) + " smaller than one output patch");
  }
  auto h = leaky_relu(conv1_(img), kSlope);
  h = leaky_relu(norm2_(conv2_(h)), kSlope);
  h = leaky_relu(norm3_(conv3_(h)), kSlope);
  h = leaky_relu(norm4_(conv4_(h)), kSlope);
  return conv5_(h);
}

void Discriminator::collect(const std::string& prefix, ParamList& out) {
  conv1_.collect(join_name(prefix, "conv1"), out);
  conv2_.collect(join_name(prefix, "conv2"), out);
  norm2_.collect(join_name(prefix, "norm2"), out);
  conv3_.collect(join_name(prefix, "conv3"), out);
  norm3_.collect(join_name(prefix, "norm3"), out);
  conv4_.collect(join_name(prefix, "conv4"), out);
  norm4_.collect(join_name(prefix, "norm4"), out);
  conv5_.collect(join_name(prefix, "conv5"), out);
}

}  // namespace boxformer
