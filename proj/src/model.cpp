#include "boxformer/model.hpp"

namespace boxformer {

void ModelConfig::validate() const {
  backbone.validate();
  aggregator.validate(backbone);
  nce.validate();
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  auto rng = derive_rng(seed, {0x696e6974ull});
  content_encoder = ContentEncoder(cfg.backbone, rng);
  style_encoder = StyleEncoder(cfg.backbone, rng);
  aggregator = Aggregator(cfg.aggregator, cfg.backbone, rng);
  generator = Generator(cfg.backbone, rng);
  discriminator = Discriminator(cfg.backbone, rng);
  for (const auto& layer : cfg.nce.layers) {
    nce_heads.emplace_back(encoder_tap_channels(cfg.backbone, layer), cfg.nce.hidden_dim, cfg.nce.projection_dim, rng);
  }
  instance_head = ProjectionHead(cfg.backbone.content_channels, cfg.nce.hidden_dim, cfg.nce.projection_dim, rng);
}

ParamList Model::generator_params() {
  ParamList out;
  content_encoder.collect("content_encoder", out);
  style_encoder.collect("style_encoder", out);
  aggregator.collect("aggregator", out);
  generator.collect("generator", out);
  for (std::size_t i = 0; i < nce_heads.size(); ++i) nce_heads[i].collect("nce_heads." + std::to_string(i), out);
  instance_head.collect("instance_head", out);
  return out;
}

ParamList Model::discriminator_params() {
  ParamList out;
  discriminator.collect("discriminator", out);
  return out;
}

ParamList Model::all_params() {
  auto out = generator_params();
  auto d = discriminator_params();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

Tensor Model::translate(const Tensor& x, const BoxLists& boxes, const Tensor& s) const {
  return generator(aggregator(content_encoder(x), boxes, s).u);
}

Tensor Model::reconstruct(const Tensor& y) const {
  return generator(aggregator(content_encoder(y), no_boxes(y.dim(0)), style_encoder(y)).u);
}

BoxLists no_boxes(std::int64_t batch) { return BoxLists(static_cast<std::size_t>(batch)); }

}  // namespace boxformer
