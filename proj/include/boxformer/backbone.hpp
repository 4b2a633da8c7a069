#pragma once

#include "boxformer/nn.hpp"

namespace boxformer {

struct BackboneConfig {
  std::int64_t image_size = 64;
  std::int64_t base_channels = 16;
  std::int64_t content_channels = 64;
  std::int64_t style_dim = 8;

  static BackboneConfig paper();
  /// Throws std::invalid_argument naming the violated field.
  void validate() const;
  std::int64_t feature_size() const { return image_size / 4; }
};

/// Activations after each named conv block; the NCE losses tap these.
struct EncoderFeatures {
  Tensor conv1;    // [B, l, H, W]
  Tensor conv2;    // [B, 2l, H, W]
  Tensor content;  // [B, l_c, H/4, W/4]
};

/// Shared topology of the content encoder and the style encoder trunk.
struct EncoderTrunk {
  Conv2d conv1, conv2, conv3;
  InstanceNorm2d norm1, norm2, norm3;

  EncoderTrunk() = default;
  EncoderTrunk(const BackboneConfig& cfg, Rng& rng);

  EncoderFeatures features(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out);
};

class ContentEncoder {
 public:
  ContentEncoder() = default;
  ContentEncoder(const BackboneConfig& cfg, Rng& rng);

  Tensor operator()(const Tensor& x) const { return features(x).content; }
  EncoderFeatures features(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) { trunk_.collect(prefix, out); }

 private:
  EncoderTrunk trunk_;
};

class StyleEncoder {
 public:
  StyleEncoder() = default;
  StyleEncoder(const BackboneConfig& cfg, Rng& rng);

  /// [B, 3, H, W] -> [B, l_s].
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out);

 private:
  EncoderTrunk trunk_;
  Conv2d conv4_;
};

/// l_s i.i.d. standard-normal draws per row: [batch, l_s].
Tensor sample_style(Rng& rng, std::int64_t style_dim, std::int64_t batch = 1);

class Generator {
 public:
  Generator() = default;
  Generator(const BackboneConfig& cfg, Rng& rng);

  /// [B, l_c, H/4, W/4] -> [B, 3, H, W] in (-1, 1).
  Tensor operator()(const Tensor& u) const;
  void collect(const std::string& prefix, ParamList& out);

 private:
  Conv2d conv1_, conv2_, conv3_;
  InstanceNorm2d norm1_, norm2_;
};

/// PatchGAN: three stride-2 4x4 stages, a stride-1 4x4 stage and a
/// stride-1 4x4 projection to one logit channel.
class Discriminator {
 public:
  static constexpr Real kSlope = 0.2;

  Discriminator() = default;
  Discriminator(const BackboneConfig& cfg, Rng& rng);

  /// [B, 3, H, W] -> raw logits [B, 1, h_d, w_d].
  Tensor operator()(const Tensor& img) const;
  void collect(const std::string& prefix, ParamList& out);

  static std::int64_t output_size(std::int64_t image_size);

 private:
  Conv2d conv1_, conv2_, conv3_, conv4_, conv5_;
  InstanceNorm2d norm2_, norm3_, norm4_;
};

}  // namespace boxformer
