#pragma once

#include "boxformer/aggregator.hpp"
#include "boxformer/backbone.hpp"
#include "boxformer/losses.hpp"

namespace boxformer {

struct ModelConfig {
  BackboneConfig backbone;
  AggregatorConfig aggregator;
  NceConfig nce;

  void validate() const;
};

/// Every network of the translation model plus the NCE projection heads.
class Model {
 public:
  explicit Model(const ModelConfig& cfg, std::uint64_t seed = 0);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }

  ContentEncoder content_encoder;
  StyleEncoder style_encoder;
  Aggregator aggregator;
  Generator generator;
  Discriminator discriminator;
  std::vector<ProjectionHead> nce_heads;  // one per NCE layer
  ProjectionHead instance_head;

  /// E, S, aggregator, G and the projection heads.
  ParamList generator_params();
  ParamList discriminator_params();
  ParamList all_params();

  /// y_hat = G(aggregate(E(x), boxes, s)). x [B,3,H,W], s [B,l_s].
  Tensor translate(const Tensor& x, const BoxLists& boxes, const Tensor& s) const;
  /// Identity path within the target domain: G(aggregate(E(y), none, S(y))).
  Tensor reconstruct(const Tensor& y) const;

 private:
  ModelConfig cfg_;
};

/// One empty box list per sample.
BoxLists no_boxes(std::int64_t batch);

}  // namespace boxformer
