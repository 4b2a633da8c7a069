#include <algorithm>
#include <random>

#include "boxformer/grad_check.hpp"
#include "boxformer/grad_suite.hpp"
#include "boxformer/losses.hpp"
#include "boxformer/model.hpp"
#include "boxformer/random.hpp"

namespace boxformer {

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.backbone = {32, 4, 8, 4};
  cfg.aggregator = {2, 8, 1, 2, 16};
  cfg.nce.patches_per_layer = 16;
  cfg.nce.instance_grid = 2;
  return cfg;
}

Tensor* find_param(ParamList params, const std::string& name) {
  for (auto& p : params)
    if (p.name == name) return p.tensor;
  throw std::invalid_argument("composite_grad_suite: no parameter named " + name);
}

constexpr std::int64_t kSliceLength = 24;

GradCheckEntry entry(std::string name, double err) { return {std::move(name), err, err < kGradCheckTolerance}; }

}  // namespace

std::vector<GradCheckEntry> composite_grad_suite(std::uint64_t seed) {
  Rng rng = derive_rng(seed, {0x636f6d70ull});
  const auto cfg = tiny_config();
  Model model(cfg, seed);
  const auto size = cfg.backbone.image_size;
  const Tensor x = rand_uniform({1, 3, size, size}, rng, -1, 1);
  const Tensor y = rand_uniform({1, 3, size, size}, rng, -1, 1);
  const Tensor s = randn({1, cfg.backbone.style_dim}, rng);
  const BoxLists boxes = {{BoundingBox{12, 13, 14, 12}}};
  // Style maps start at zero; perturb them so the style path is exercised.
  for (auto& p : model.all_params()) {
    if (p.name.find("style_m") == std::string::npos) continue;
    for (auto& v : p.tensor->mutable_data()) v = static_cast<Real>(std::normal_distribution<double>(0, 0.1)(rng));
  }
  // The plain mean of an instance-normalized output barely moves with its
  // input, leaving per-pixel gradients at round-off level; a zero-mean
  // random weighting keeps them well above it.
  const auto d_size = Discriminator::output_size(size);
  const Tensor w_img = randn({1, 3, size, size}, rng);
  const Tensor w_logit = randn({1, 1, d_size, d_size}, rng);
  std::vector<GradCheckEntry> out;

  out.push_back(entry("encoder->aggregator->generator/input",
                      grad_check([&](const Tensor& v) { return mean(mul(model.translate(v, boxes, s), w_img)); }, x,
                                 kGradCheckEps, kCompositeScaleFloor)));
  out.push_back(entry("encoder->aggregator->generator/style",
                      grad_check([&](const Tensor& v) { return mean(mul(model.translate(x, boxes, v), w_img)); }, s,
                                 kGradCheckEps, kCompositeScaleFloor)));

  // Keys are stop-gradient constants: they are evaluated once at the base
  // point and held fixed while the anchor side is differentiated.
  Rng loc_rng = derive_rng(seed, {0x6c6f63ull});
  PatchLocations locations;
  NceKeys keys;
  InstanceKeys instance_keys;
  {
    NoGradScope no_grad;
    const auto fx = model.content_encoder.features(x);
    locations = sample_patch_locations(fx, cfg.nce, loc_rng);
    keys = global_nce_keys(fx, model.nce_heads, cfg.nce, locations);
    instance_keys = instance_nce_keys(fx.content, boxes, model.instance_head, cfg.nce);
  }
  const LossWeights weights;
  auto total = [&]() {
    const auto c = model.content_encoder(x);
    const auto y_hat = model.generator(model.aggregator(c, boxes, s).u);
    const auto fy = model.content_encoder.features(y_hat);
    return total_loss(generator_adversarial_loss(model.discriminator(y_hat)),
                      global_content_loss(keys, fy, model.nce_heads, cfg.nce, locations),
                      instance_content_loss(instance_keys, fy.content, boxes, model.instance_head, cfg.nce),
                      style_recon_loss(model.style_encoder(y_hat), s), image_recon_loss(model.reconstruct(y), y),
                      weights);
  };
  for (const char* name : {"content_encoder.norm1.weight", "aggregator.patch_embed.0.weight", "aggregator.blocks.0.fc2.weight", "aggregator.deconv.0.bias",
                           "aggregator.blocks.0.qkv.bias", "generator.conv3.bias", "style_encoder.conv4.bias",
                           "nce_heads.2.fc1.bias", "instance_head.fc2.bias"}) {
    // The first kSliceLength entries vary; the rest stay at their values.
    Tensor* param = find_param(model.all_params(), name);
    const Tensor original = *param;
    const auto n = std::min<std::int64_t>(kSliceLength, original.numel());
    const auto flat = reshape(original, {original.numel()});
    const auto head = slice(flat, 0, 0, n).clone();
    const auto rest = n < original.numel() ? slice(flat, 0, n, original.numel() - n).clone() : Tensor();
    const double err = grad_check(
        [&](const Tensor& v) {
          *param = reshape(rest.defined() ? concat({v, rest}, 0) : v, original.shape());
          return total();
        },
        head, kGradCheckEps, kCompositeScaleFloor);
    *param = original;
    out.push_back(entry(std::string("total_loss/") + name, err));
  }

  out.push_back(entry("discriminator logit/input",
                      grad_check([&](const Tensor& v) { return mean(mul(model.discriminator(v), w_logit)); }, y, kGradCheckEps, kCompositeScaleFloor)));
  return out;
}

}  // namespace boxformer
