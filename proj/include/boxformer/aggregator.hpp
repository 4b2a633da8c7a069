#pragma once

#include <vector>

#include "boxformer/backbone.hpp"

namespace boxformer {

struct AggregatorConfig {
  std::int64_t patch_stride = 2;  // k; also the ROI output resolution
  std::int64_t token_dim = 64;    // l'_c
  std::int64_t blocks = 4;        // T
  std::int64_t heads = 4;
  std::int64_t mlp_dim = 256;

  static AggregatorConfig paper();
  /// Frequency bands per coordinate; 8 K = l'_c.
  std::int64_t freq_bands() const { return token_dim / 8; }
  void validate() const;
  /// Also checks that k divides the encoder output of `backbone`.
  void validate(const BackboneConfig& backbone) const;
};

/// Center/size box in pixels.
struct BoundingBox {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;

  bool operator==(const BoundingBox&) const = default;
};

/// Box geometry normalized by the image size; every field in [0, 1].
struct NormBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;
};

constexpr double kMinBoxSide = 2.0;

NormBox normalize(const BoundingBox& box, std::int64_t image_w, std::int64_t image_h);
/// Throws std::invalid_argument unless the box is inside the image with
/// sides of at least kMinBoxSide pixels.
void validate_box(const BoundingBox& box, std::int64_t image_w, std::int64_t image_h);
bool box_is_valid(const BoundingBox& box, std::int64_t image_w, std::int64_t image_h);

/// (sin(2^0 pi a), cos(2^0 pi a), ..., sin(2^{K-1} pi a), cos(2^{K-1} pi a)).
std::vector<double> gamma(double a, std::int64_t bands);

/// Cat(gamma(x), gamma(y), gamma(w), gamma(h)) -> [8K].
Tensor pos_embed(const NormBox& geometry, std::int64_t bands);
/// Embeddings of the raster-ordered grid_h x grid_w patches -> [G, 8K].
Tensor pos_embed_global(std::int64_t grid_h, std::int64_t grid_w, std::int64_t bands);
Tensor pos_embed_instance(const NormBox& box, std::int64_t bands);

/// Samples c [C,h,w] at the centers of a k x k bin grid over the box. Box
/// pixels map to feature coordinates by dividing by `feature_stride`.
/// Returns [C, k, k].
Tensor roi_align(const Tensor& c, const BoundingBox& box, std::int64_t out_res,
                 double feature_stride = 4.0);

/// Normalizes each channel of z [M, D] over the token axis, then applies
/// per-channel scale and shift [D]. Population variance, eps inside the
/// square root.
Tensor adain(const Tensor& z, const Tensor& scale, const Tensor& shift, double eps = kNormEps);
/// The pre-affine part of adain.
Tensor token_normalize(const Tensor& z, double eps = kNormEps);

struct StyleParams {
  Tensor scale;  // [D]
  Tensor shift;  // [D]
};

/// Learned affine map from a style code to one AdaIN site's parameters.
/// Zero-initialized so the site starts as plain normalization.
struct StyleToParams {
  Linear map;

  StyleToParams() = default;
  StyleToParams(std::int64_t style_dim, std::int64_t token_dim);

  /// s: [l_s] or [1, l_s].
  StyleParams operator()(const Tensor& s) const;
  void collect(const std::string& prefix, ParamList& out);
};

/// Intermediate values of one block, captured on request.
struct BlockTrace {
  Tensor normalized_msa;  // pre-affine tokens entering MSA
  Tensor normalized_mlp;  // pre-affine tokens entering the MLP
  Tensor attention;       // [heads, M, M]
};

class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const AggregatorConfig& cfg, std::int64_t style_dim, Rng& rng);

  /// z [M, D], s [l_s] -> [M, D].
  Tensor operator()(const Tensor& z, const Tensor& s, BlockTrace* trace = nullptr) const;
  void collect(const std::string& prefix, ParamList& out);

  StyleToParams& style_msa() { return style_msa_; }
  StyleToParams& style_mlp() { return style_mlp_; }
  Linear& qkv() { return qkv_; }
  Linear& proj() { return proj_; }
  Linear& fc1() { return fc1_; }
  Linear& fc2() { return fc2_; }

 private:
  std::int64_t heads_ = 1;
  StyleToParams style_msa_, style_mlp_;
  Linear qkv_, proj_, fc1_, fc2_;
};

/// Grid tokens followed by instance tokens, with their geometry.
struct TokenSequence {
  Tensor tokens;  // [G + N, D]
  std::vector<NormBox> geometry;
  std::int64_t grid_h = 0;
  std::int64_t grid_w = 0;
  std::int64_t num_instances = 0;

  std::int64_t grid_tokens() const { return grid_h * grid_w; }
};

/// p: [D, gh, gw] for one sample; instance_embeds: [N, D] (undefined or
/// zero rows when N = 0).
TokenSequence build_tokens(const Tensor& p, const Tensor& instance_embeds, const std::vector<NormBox>& boxes,
                           std::int64_t bands);

struct AggregateTrace {
  std::vector<std::vector<BlockTrace>> blocks;  // [sample][block]
  std::vector<TokenSequence> tokens;            // z_0 per sample
};

struct AggregateOutput {
  Tensor u;                   // [B, l_c, h, w]
  std::vector<Tensor> u_ins;  // one [D] token per box, samples in order
};

using BoxLists = std::vector<std::vector<BoundingBox>>;

class Aggregator {
 public:
  Aggregator() = default;
  Aggregator(const AggregatorConfig& cfg, const BackboneConfig& backbone, Rng& rng);

  const AggregatorConfig& config() const { return cfg_; }

  /// c [B, l_c, h, w] -> [B, D, h/k, w/k].
  Tensor patch_embed(const Tensor& c) const;
  /// c_ins [C, k, k] or [N, C, k, k] -> [N, D].
  Tensor instance_embed(const Tensor& c_ins) const;
  /// [B, D, h/k, w/k] -> [B, l_c, h, w].
  Tensor expand(const Tensor& z) const;

  /// boxes are in image pixels (feature stride 4); one list per sample,
  /// lists may be empty. s: [B, l_s].
  AggregateOutput operator()(const Tensor& c, const BoxLists& boxes, const Tensor& s,
                             AggregateTrace* trace = nullptr) const;

  void collect(const std::string& prefix, ParamList& out);
  std::vector<TransformerBlock>& blocks() { return blocks_; }

 private:
  AggregatorConfig cfg_;
  std::int64_t image_size_ = 0;
  std::vector<Conv2d> embed_;
  std::vector<ConvTranspose2d> deconv_;
  std::vector<TransformerBlock> blocks_;
};

}  // namespace boxformer
