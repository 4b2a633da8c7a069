#include "boxformer/losses.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace boxformer {

GanMode gan_mode_from_string(const std::string& name) {
  if (name == "logistic") return GanMode::kLogistic;
  if (name == "lsgan") return GanMode::kLeastSquares;
  throw std::invalid_argument("unknown gan mode '" + name + "' (expected logistic or lsgan)");
}

std::string to_string(GanMode mode) { return mode == GanMode::kLogistic ? "logistic" : "lsgan"; }

Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake, GanMode mode) {
  if (mode == GanMode::kLeastSquares) {
    const auto r = shift(d_real, -1);
    return add(mean(mul(r, r)), mean(mul(d_fake, d_fake)));
  }
  // -log sigmoid(l) = softplus(-l); -log(1 - sigmoid(l)) = softplus(l).
  return add(mean(softplus(scale(d_real, -1))), mean(softplus(d_fake)));
}

Tensor generator_adversarial_loss(const Tensor& d_fake, GanMode mode) {
  if (mode == GanMode::kLeastSquares) {
    const auto f = shift(d_fake, -1);
    return mean(mul(f, f));
  }
  return mean(softplus(scale(d_fake, -1)));
}

GanLosses gan_losses(const Tensor& d_real, const Tensor& d_fake, GanMode mode) {
  return {discriminator_loss(d_real, d_fake, mode), generator_adversarial_loss(d_fake, mode)};
}

Tensor info_nce(const Tensor& anchor, const Tensor& positive, const Tensor& negatives, double tau) {
  const auto d = anchor.numel();
  if (positive.numel() != d) {
    throw ShapeError("info_nce: anchor " + to_string(anchor.shape()) + " vs positive " + to_string(positive.shape()));
  }
  if (negatives.rank() != 2 || negatives.dim(0) < 1 || negatives.dim(1) != d) {
    throw ShapeError("info_nce: expected negatives [n>=1," + std::to_string(d) + "], got " +
                     to_string(negatives.shape()));
  }
  if (!(tau > 0)) throw std::invalid_argument("info_nce: temperature must be positive");
  const auto keys = concat({reshape(positive, {1, d}), negatives}, 0);
  const auto logits = scale(matmul(keys, reshape(anchor, {d, 1})), static_cast<Real>(1.0 / tau));  // [n+1, 1]
  const auto lse = logsumexp(reshape(logits, {1, logits.dim(0)}), 1);
  return reshape(sub(lse, slice(reshape(logits, {1, logits.dim(0)}), 1, 0, 1)), {1});
}

Tensor patch_nce(const Tensor& anchors, const Tensor& keys, double tau) {
  if (anchors.rank() != 2 || anchors.shape() != keys.shape()) {
    throw ShapeError("patch_nce: anchors " + to_string(anchors.shape()) + " vs keys " + to_string(keys.shape()));
  }
  const auto s = anchors.dim(0);
  if (s < 2) throw ShapeError("patch_nce: needs at least 2 locations, got " + to_string(anchors.shape()));
  if (!(tau > 0)) throw std::invalid_argument("patch_nce: temperature must be positive");
  const auto logits = scale(matmul(anchors, permute(keys, {1, 0})), static_cast<Real>(1.0 / tau));  // [S, S]
  std::vector<Real> eye(static_cast<std::size_t>(s * s), 0);
  for (std::int64_t i = 0; i < s; ++i) eye[static_cast<std::size_t>(i * s + i)] = 1;
  const auto positives = sum(mul(logits, Tensor::from({s, s}, std::move(eye))), {1}, true);
  return mean(sub(logsumexp(logits, 1), positives));
}

Tensor l2_normalize_rows(const Tensor& x) {
  return div(x, sqrt(shift(sum(mul(x, x), {x.rank() - 1}, true), static_cast<Real>(1e-12))));
}

void NceConfig::validate() const {
  if (!(temperature > 0)) throw std::invalid_argument("nce.temperature must be positive");
  if (layers.empty()) throw std::invalid_argument("nce.layers must not be empty");
  for (const auto& l : layers)
    if (l != "conv1" && l != "conv2" && l != "content") {
      throw std::invalid_argument("nce.layers: unknown encoder tap '" + l + "'");
    }
  if (patches_per_layer < 2) throw std::invalid_argument("nce.patches_per_layer must be >= 2");
  if (projection_dim < 1 || hidden_dim < 1) throw std::invalid_argument("nce head dims must be >= 1");
  if (instance_grid < 2) throw std::invalid_argument("nce.instance_grid must be >= 2");
}

const Tensor& encoder_tap(const EncoderFeatures& f, const std::string& name) {
  if (name == "conv1") return f.conv1;
  if (name == "conv2") return f.conv2;
  if (name == "content") return f.content;
  throw std::invalid_argument("unknown encoder tap '" + name + "'");
}

std::int64_t encoder_tap_channels(const BackboneConfig& cfg, const std::string& name) {
  if (name == "conv1") return cfg.base_channels;
  if (name == "conv2") return 2 * cfg.base_channels;
  if (name == "content") return cfg.content_channels;
  throw std::invalid_argument("unknown encoder tap '" + name + "'");
}

ProjectionHead::ProjectionHead(std::int64_t in, std::int64_t hidden, std::int64_t out, Rng& rng)
    : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

Tensor ProjectionHead::operator()(const Tensor& x) const { return l2_normalize_rows(fc2(relu(fc1(x)))); }

void ProjectionHead::collect(const std::string& prefix, ParamList& out) {
  fc1.collect(join_name(prefix, "fc1"), out);
  fc2.collect(join_name(prefix, "fc2"), out);
}

PatchLocations sample_patch_locations(const EncoderFeatures& f, const NceConfig& cfg, Rng& rng) {
  PatchLocations locs;
  for (const auto& name : cfg.layers) {
    const auto& t = encoder_tap(f, name);
    const auto positions = t.dim(2) * t.dim(3);
    if (cfg.patches_per_layer > positions) {
      throw std::invalid_argument("nce: patches_per_layer " + std::to_string(cfg.patches_per_layer) + " exceeds the " +
                                  std::to_string(positions) + " positions of tap " + name);
    }
    auto& per_layer = locs.emplace_back();
    for (std::int64_t b = 0; b < t.dim(0); ++b) {
      std::vector<std::int64_t> all(static_cast<std::size_t>(positions));
      std::iota(all.begin(), all.end(), 0);
      // Partial Fisher-Yates so the draw only depends on the generator stream.
      for (std::int64_t i = 0; i < cfg.patches_per_layer; ++i) {
        std::uniform_int_distribution<std::int64_t> pick(i, positions - 1);
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
      }
      all.resize(static_cast<std::size_t>(cfg.patches_per_layer));
      per_layer.push_back(std::move(all));
    }
  }
  return locs;
}

Tensor gather_locations(const Tensor& features, std::int64_t b, const std::vector<std::int64_t>& indices) {
  const auto c = features.dim(1);
  const auto hw = features.dim(2) * features.dim(3);
  const auto flat = reshape(slice(features, 0, b, 1), {c, hw});
  return permute(index_select(flat, 1, indices), {1, 0});
}

NceKeys global_nce_keys(const EncoderFeatures& fx, const std::vector<ProjectionHead>& heads, const NceConfig& cfg,
                        const PatchLocations& locations) {
  if (heads.size() != cfg.layers.size() || locations.size() != cfg.layers.size()) {
    throw std::invalid_argument("global_content_loss: need one head and one location set per layer");
  }
  NceKeys keys(cfg.layers.size());
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const auto& tx = encoder_tap(fx, cfg.layers[l]);
    if (locations[l].size() != static_cast<std::size_t>(tx.dim(0))) {
      throw std::invalid_argument("global_content_loss: location sets do not match the batch");
    }
    for (std::int64_t b = 0; b < tx.dim(0); ++b) {
      keys[l].push_back(heads[l](gather_locations(tx, b, locations[l][static_cast<std::size_t>(b)])).detach());
    }
  }
  return keys;
}

Tensor global_content_loss(const NceKeys& keys, const EncoderFeatures& fy, const std::vector<ProjectionHead>& heads,
                           const NceConfig& cfg, const PatchLocations& locations) {
  if (heads.size() != cfg.layers.size() || locations.size() != cfg.layers.size() ||
      keys.size() != cfg.layers.size()) {
    throw std::invalid_argument("global_content_loss: need one head, key set and location set per layer");
  }
  Tensor total;
  std::int64_t terms = 0;
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const auto& ty = encoder_tap(fy, cfg.layers[l]);
    if (keys[l].size() != static_cast<std::size_t>(ty.dim(0))) {
      throw ShapeError("global_content_loss: tap " + cfg.layers[l] + " has " + std::to_string(keys[l].size()) +
                       " key sets for batch " + std::to_string(ty.dim(0)));
    }
    for (std::int64_t b = 0; b < ty.dim(0); ++b) {
      const auto anchors = heads[l](gather_locations(ty, b, locations[l][static_cast<std::size_t>(b)]));
      const auto term = patch_nce(anchors, keys[l][static_cast<std::size_t>(b)], cfg.temperature);
      total = total.defined() ? add(total, term) : term;
      ++terms;
    }
  }
  return scale(total, static_cast<Real>(1.0 / static_cast<double>(terms)));
}

Tensor global_content_loss(const EncoderFeatures& fx, const EncoderFeatures& fy,
                           const std::vector<ProjectionHead>& heads, const NceConfig& cfg,
                           const PatchLocations& locations) {
  for (const auto& name : cfg.layers) {
    const auto& tx = encoder_tap(fx, name);
    const auto& ty = encoder_tap(fy, name);
    if (tx.shape() != ty.shape()) {
      throw ShapeError("global_content_loss: tap " + name + " shapes " + to_string(tx.shape()) + " vs " +
                       to_string(ty.shape()));
    }
  }
  return global_content_loss(global_nce_keys(fx, heads, cfg, locations), fy, heads, cfg, locations);
}

Tensor global_content_loss(const EncoderFeatures& fx, const EncoderFeatures& fy,
                           const std::vector<ProjectionHead>& heads, const NceConfig& cfg, Rng& rng) {
  return global_content_loss(fx, fy, heads, cfg, sample_patch_locations(fx, cfg, rng));
}

namespace {

Tensor roi_rows(const Tensor& content, std::int64_t b, const BoundingBox& box, std::int64_t r) {
  const auto c = content.dim(1);
  const auto map = reshape(slice(content, 0, b, 1), {c, content.dim(2), content.dim(3)});
  return permute(reshape(roi_align(map, box, r), {c, r * r}), {1, 0});
}

void check_instance_inputs(const Tensor& content, const BoxLists& boxes) {
  if (content.rank() != 4) throw ShapeError("instance_content_loss: content shape " + to_string(content.shape()));
  if (static_cast<std::int64_t>(boxes.size()) != content.dim(0)) {
    throw std::invalid_argument("instance_content_loss: box lists do not match the batch");
  }
}

}  // namespace

InstanceKeys instance_nce_keys(const Tensor& content_x, const BoxLists& boxes, const ProjectionHead& head,
                               const NceConfig& cfg) {
  check_instance_inputs(content_x, boxes);
  const auto image_h = content_x.dim(2) * 4;
  const auto image_w = content_x.dim(3) * 4;
  InstanceKeys keys(boxes.size());
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    for (const auto& box : boxes[b]) {
      if (!box_is_valid(box, image_w, image_h)) {
        keys[b].emplace_back();
        continue;
      }
      keys[b].push_back(head(roi_rows(content_x, static_cast<std::int64_t>(b), box, cfg.instance_grid)).detach());
    }
  }
  return keys;
}

Tensor instance_content_loss(const InstanceKeys& keys, const Tensor& content_y, const BoxLists& boxes,
                             const ProjectionHead& head, const NceConfig& cfg, std::int64_t* skipped) {
  check_instance_inputs(content_y, boxes);
  if (keys.size() != boxes.size()) throw std::invalid_argument("instance_content_loss: key lists do not match the batch");
  const auto image_h = content_y.dim(2) * 4;
  const auto image_w = content_y.dim(3) * 4;
  Tensor total;
  std::int64_t instances = 0;
  std::int64_t dropped = 0;
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    if (keys[b].size() != boxes[b].size()) {
      throw std::invalid_argument("instance_content_loss: key list " + std::to_string(b) + " does not match its boxes");
    }
    for (std::size_t i = 0; i < boxes[b].size(); ++i) {
      if (!box_is_valid(boxes[b][i], image_w, image_h)) {
        ++dropped;
        continue;
      }
      const auto anchors = head(roi_rows(content_y, static_cast<std::int64_t>(b), boxes[b][i], cfg.instance_grid));
      const auto term = patch_nce(anchors, keys[b][i], cfg.temperature);
      total = total.defined() ? add(total, term) : term;
      ++instances;
    }
  }
  if (skipped) *skipped = dropped;
  if (instances == 0) return Tensor::zeros({1});
  return scale(total, static_cast<Real>(1.0 / static_cast<double>(instances)));
}

Tensor instance_content_loss(const Tensor& content_x, const Tensor& content_y, const BoxLists& boxes,
                             const ProjectionHead& head, const NceConfig& cfg, std::int64_t* skipped) {
  if (content_x.shape() != content_y.shape()) {
    throw ShapeError("instance_content_loss: content shapes " + to_string(content_x.shape()) + " vs " +
                     to_string(content_y.shape()));
  }
  return instance_content_loss(instance_nce_keys(content_x, boxes, head, cfg), content_y, boxes, head, cfg, skipped);
}

Tensor image_recon_loss(const Tensor& reconstruction, const Tensor& y) {
  if (reconstruction.shape() != y.shape()) {
    throw ShapeError("image_recon_loss: " + to_string(reconstruction.shape()) + " vs " + to_string(y.shape()));
  }
  return mean(abs(sub(reconstruction, y)));
}

Tensor style_recon_loss(const Tensor& style_hat, const Tensor& style) {
  if (style_hat.shape() != style.shape()) {
    throw ShapeError("style_recon_loss: " + to_string(style_hat.shape()) + " vs " + to_string(style.shape()));
  }
  return mean(abs(sub(style_hat, style)));
}

void LossWeights::validate() const {
  if (global < 0 || instance < 0 || style < 0 || image < 0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
}

double total_loss(double gan_g, double nce_global, double nce_instance, double recon_style, double recon_img,
                  const LossWeights& w) {
  w.validate();
  return gan_g + w.global * nce_global + w.instance * nce_instance + w.style * recon_style + w.image * recon_img;
}

Tensor total_loss(const Tensor& gan_g, const Tensor& nce_global, const Tensor& nce_instance,
                  const Tensor& recon_style, const Tensor& recon_img, const LossWeights& w) {
  w.validate();
  auto t = add(gan_g, scale(nce_global, static_cast<Real>(w.global)));
  t = add(t, scale(nce_instance, static_cast<Real>(w.instance)));
  t = add(t, scale(recon_style, static_cast<Real>(w.style)));
  return add(t, scale(recon_img, static_cast<Real>(w.image)));
}

}  // namespace boxformer
