#include "boxformer/aggregator.hpp"

#include <cassert>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace boxformer {

namespace {

constexpr double kFeatureStride = 4.0;

std::int64_t log2_exact(std::int64_t k) {
  std::int64_t n = 0;
  while ((std::int64_t{1} << n) < k) ++n;
  return n;
}

}  // namespace

AggregatorConfig AggregatorConfig::paper() { return {8, 1024, 6, 4, 4096}; }

void AggregatorConfig::validate() const {
  if (patch_stride != 1 && patch_stride != 2 && patch_stride != 4 && patch_stride != 8) {
    throw std::invalid_argument("patch_stride must be one of 1, 2, 4, 8");
  }
  if (token_dim < 8 || token_dim % 8 != 0) throw std::invalid_argument("token_dim must be a positive multiple of 8");
  if (heads < 1 || token_dim % heads != 0) throw std::invalid_argument("token_dim must be divisible by heads");
  if (blocks < 0) throw std::invalid_argument("blocks must be >= 0");
  if (mlp_dim < 1) throw std::invalid_argument("mlp_dim must be >= 1");
}

void AggregatorConfig::validate(const BackboneConfig& backbone) const {
  validate();
  if (backbone.feature_size() % patch_stride != 0) {
    throw std::invalid_argument("patch_stride must divide the encoder output size " +
                                std::to_string(backbone.feature_size()));
  }
}

NormBox normalize(const BoundingBox& box, std::int64_t image_w, std::int64_t image_h) {
  const auto w = static_cast<double>(image_w);
  const auto h = static_cast<double>(image_h);
  return {box.cx / w, box.cy / h, box.w / w, box.h / h};
}

bool box_is_valid(const BoundingBox& box, std::int64_t image_w, std::int64_t image_h) {
  const double x0 = box.cx - box.w / 2, x1 = box.cx + box.w / 2;
  const double y0 = box.cy - box.h / 2, y1 = box.cy + box.h / 2;
  return std::isfinite(box.cx) && std::isfinite(box.cy) && box.w >= kMinBoxSide && box.h >= kMinBoxSide &&
         x0 >= 0 && y0 >= 0 && x1 <= static_cast<double>(image_w) && y1 <= static_cast<double>(image_h);
}

void validate_box(const BoundingBox& box, std::int64_t image_w, std::int64_t image_h) {
  if (!box_is_valid(box, image_w, image_h)) {
    throw std::invalid_argument("invalid box (cx=" + std::to_string(box.cx) + ", cy=" + std::to_string(box.cy) +
                                ", w=" + std::to_string(box.w) + ", h=" + std::to_string(box.h) + ") for a " +
                                std::to_string(image_w) + "x" + std::to_string(image_h) + " image");
  }
}

std::vector<double> gamma(double a, std::int64_t bands) {
  assert(a >= 0.0 && a <= 1.0);
  if (bands < 1) throw std::invalid_argument("gamma: bands must be >= 1");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(2 * bands));
  double freq = std::numbers::pi;
  for (std::int64_t j = 0; j < bands; ++j, freq *= 2) {
    out.push_back(std::sin(freq * a));
    out.push_back(std::cos(freq * a));
  }
  return out;
}

Tensor pos_embed(const NormBox& g, std::int64_t bands) {
  std::vector<Real> v;
  v.reserve(static_cast<std::size_t>(8 * bands));
  for (double a : {g.x, g.y, g.w, g.h})
    for (double e : gamma(a, bands)) v.push_back(static_cast<Real>(e));
  return Tensor::from({8 * bands}, std::move(v));
}

Tensor pos_embed_global(std::int64_t grid_h, std::int64_t grid_w, std::int64_t bands) {
  const auto dim = 8 * bands;
  std::vector<Real> v;
  v.reserve(static_cast<std::size_t>(grid_h * grid_w * dim));
  const double cw = 1.0 / static_cast<double>(grid_w);
  const double ch = 1.0 / static_cast<double>(grid_h);
  for (std::int64_t i = 0; i < grid_h; ++i)
    for (std::int64_t j = 0; j < grid_w; ++j) {
      const NormBox cell{(static_cast<double>(j) + 0.5) * cw, (static_cast<double>(i) + 0.5) * ch, cw, ch};
      const auto row = pos_embed(cell, bands);
      v.insert(v.end(), row.data().begin(), row.data().end());
    }
  return Tensor::from({grid_h * grid_w, dim}, std::move(v));
}

Tensor pos_embed_instance(const NormBox& box, std::int64_t bands) { return pos_embed(box, bands); }

Tensor roi_align(const Tensor& c, const BoundingBox& box, std::int64_t out_res, double feature_stride) {
  if (c.rank() != 3) throw ShapeError("roi_align: expected [C,h,w], got " + to_string(c.shape()));
  if (out_res < 1) throw std::invalid_argument("roi_align: out_res must be >= 1");
  if (!(box.w >= kMinBoxSide && box.h >= kMinBoxSide)) {
    throw std::invalid_argument("roi_align: degenerate box (w=" + std::to_string(box.w) +
                                ", h=" + std::to_string(box.h) + ")");
  }
  const double x0 = (box.cx - box.w / 2) / feature_stride;
  const double y0 = (box.cy - box.h / 2) / feature_stride;
  const double bw = box.w / feature_stride / static_cast<double>(out_res);
  const double bh = box.h / feature_stride / static_cast<double>(out_res);
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(out_res * out_res));
  for (std::int64_t i = 0; i < out_res; ++i)
    for (std::int64_t j = 0; j < out_res; ++j)
      pts.push_back({x0 + (static_cast<double>(j) + 0.5) * bw, y0 + (static_cast<double>(i) + 0.5) * bh});
  const auto sampled = bilinear_sample(c, pts);  // [k*k, C]
  return reshape(permute(sampled, {1, 0}), {c.dim(0), out_res, out_res});
}

Tensor token_normalize(const Tensor& z, double eps) {
  if (z.rank() != 2) throw ShapeError("adain: expected tokens [M,D], got " + to_string(z.shape()));
  if (z.dim(0) < 2) throw ShapeError("adain: needs at least 2 tokens, got " + to_string(z.shape()));
  const auto mu = mean(z, {0}, true);
  const auto centered = sub(z, mu);
  const auto v = mean(mul(centered, centered), {0}, true);
  return div(centered, sqrt(shift(v, static_cast<Real>(eps))));
}

Tensor adain(const Tensor& z, const Tensor& scale_, const Tensor& shift_, double eps) {
  return add(mul(token_normalize(z, eps), scale_), shift_);
}

StyleToParams::StyleToParams(std::int64_t style_dim, std::int64_t token_dim)
    : map(Linear::zeros(style_dim, 2 * token_dim)) {}

StyleParams StyleToParams::operator()(const Tensor& s) const {
  const auto ls = map.in_features();
  const auto d = map.out_features() / 2;
  if (s.numel() != ls) throw ShapeError("style_to_params: expected style code of length " + std::to_string(ls) +
                                        ", got " + to_string(s.shape()));
  const auto out = map(reshape(s, {1, ls}));
  return {shift(reshape(slice(out, 1, 0, d), {d}), 1), reshape(slice(out, 1, d, d), {d})};
}

void StyleToParams::collect(const std::string& prefix, ParamList& out) { map.collect(prefix, out); }

TransformerBlock::TransformerBlock(const AggregatorConfig& cfg, std::int64_t style_dim, Rng& rng)
    : heads_(cfg.heads),
      style_msa_(style_dim, cfg.token_dim),
      style_mlp_(style_dim, cfg.token_dim),
      qkv_(cfg.token_dim, 3 * cfg.token_dim, rng),
      proj_(cfg.token_dim, cfg.token_dim, rng),
      fc1_(cfg.token_dim, cfg.mlp_dim, rng),
      fc2_(cfg.mlp_dim, cfg.token_dim, rng) {}

Tensor TransformerBlock::operator()(const Tensor& z, const Tensor& s, BlockTrace* trace) const {
  const auto d = proj_.out_features();
  if (z.rank() != 2 || z.dim(1) != d) {
    throw ShapeError("transformer_block: expected tokens [M," + std::to_string(d) + "], got " + to_string(z.shape()));
  }
  const auto m = z.dim(0);
  const auto dh = d / heads_;

  const auto p1 = style_msa_(s);
  const auto n1 = token_normalize(z);
  const auto qkv = permute(reshape(qkv_(add(mul(n1, p1.scale), p1.shift)), {m, 3, heads_, dh}), {1, 2, 0, 3});
  const auto q = reshape(slice(qkv, 0, 0, 1), {heads_, m, dh});
  const auto k = reshape(slice(qkv, 0, 1, 1), {heads_, m, dh});
  const auto v = reshape(slice(qkv, 0, 2, 1), {heads_, m, dh});
  const auto scores = scale(matmul(q, permute(k, {0, 2, 1})), static_cast<Real>(1.0 / std::sqrt(double(dh))));
  const auto attn = softmax(scores, 2);
  const auto o = reshape(permute(matmul(attn, v), {1, 0, 2}), {m, d});
  const auto z1 = add(z, proj_(o));

  const auto p2 = style_mlp_(s);
  const auto n2 = token_normalize(z1);
  const auto z2 = add(z1, fc2_(gelu(fc1_(add(mul(n2, p2.scale), p2.shift)))));
  if (trace) *trace = {n1, n2, attn};
  return z2;
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) {
  style_msa_.collect(join_name(prefix, "style_msa"), out);
  qkv_.collect(join_name(prefix, "qkv"), out);
  proj_.collect(join_name(prefix, "proj"), out);
  style_mlp_.collect(join_name(prefix, "style_mlp"), out);
  fc1_.collect(join_name(prefix, "fc1"), out);
  fc2_.collect(join_name(prefix, "fc2"), out);
}

TokenSequence build_tokens(const Tensor& p, const Tensor& instance_embeds, const std::vector<NormBox>& boxes,
                           std::int64_t bands) {
  if (p.rank() != 3) throw ShapeError("build_tokens: expected grid [D,gh,gw], got " + to_string(p.shape()));
  const auto d = p.dim(0);
  const auto n = instance_embeds.defined() ? instance_embeds.dim(0) : 0;
  if (n != static_cast<std::int64_t>(boxes.size())) {
    throw std::invalid_argument("build_tokens: " + std::to_string(n) + " instance embeddings for " +
                                std::to_string(boxes.size()) + " boxes");
  }
  if (8 * bands != d) throw ShapeError("build_tokens: 8K = " + std::to_string(8 * bands) + " != l'_c = " + std::to_string(d));
  TokenSequence seq;
  seq.grid_h = p.dim(1);
  seq.grid_w = p.dim(2);
  seq.num_instances = n;
  const auto g = seq.grid_tokens();
  auto tokens = permute(reshape(p, {d, g}), {1, 0});
  auto pos = pos_embed_global(seq.grid_h, seq.grid_w, bands);
  const double cw = 1.0 / static_cast<double>(seq.grid_w);
  const double ch = 1.0 / static_cast<double>(seq.grid_h);
  for (std::int64_t i = 0; i < seq.grid_h; ++i)
    for (std::int64_t j = 0; j < seq.grid_w; ++j)
      seq.geometry.push_back({(static_cast<double>(j) + 0.5) * cw, (static_cast<double>(i) + 0.5) * ch, cw, ch});
  if (n > 0) {
    if (instance_embeds.rank() != 2 || instance_embeds.dim(1) != d) {
      throw ShapeError("build_tokens: instance embeddings " + to_string(instance_embeds.shape()) +
                       " do not match grid " + to_string(p.shape()));
    }
    std::vector<Tensor> rows{pos};
    for (const auto& b : boxes) {
      rows.push_back(reshape(pos_embed_instance(b, bands), {1, d}));
      seq.geometry.push_back(b);
    }
    pos = concat(rows, 0);
    tokens = concat({tokens, instance_embeds}, 0);
  }
  seq.tokens = add(tokens, pos);
  return seq;
}

Aggregator::Aggregator(const AggregatorConfig& cfg, const BackboneConfig& backbone, Rng& rng) : cfg_(cfg) {
  cfg.validate(backbone);
  const auto d = cfg.token_dim;
  const auto lc = backbone.content_channels;
  const auto stages = log2_exact(cfg.patch_stride);
  if (stages == 0) {
    embed_.emplace_back(lc, d, 3, Conv2dOptions{1, 1, PadMode::kZeros}, rng);
  } else {
    for (std::int64_t i = 0; i < stages; ++i)
      embed_.emplace_back(i == 0 ? lc : d, d, 3, Conv2dOptions{2, 1, PadMode::kZeros}, rng);
  }
  for (std::int64_t i = 0; i < cfg.blocks; ++i) blocks_.emplace_back(cfg, backbone.style_dim, rng);
  if (stages == 0) {
    deconv_.emplace_back(d, lc, 3, ConvTranspose2dOptions{1, 1, 0}, rng);
  } else {
    for (std::int64_t i = 0; i < stages; ++i)
      deconv_.emplace_back(d, i + 1 == stages ? lc : d, 3, ConvTranspose2dOptions{2, 1, 1}, rng);
  }
}

Tensor Aggregator::patch_embed(const Tensor& c) const {
  const auto k = cfg_.patch_stride;
  if (c.rank() != 4 || c.dim(1) != embed_.front().weight.dim(1)) {
    throw ShapeError("patch_embed: expected [B," + std::to_string(embed_.front().weight.dim(1)) + ",h,w], got " +
                     to_string(c.shape()));
  }
  if (c.dim(2) % k != 0 || c.dim(3) % k != 0) {
    throw ShapeError("patch_embed: spatial dims of " + to_string(c.shape()) + " not divisible by k=" + std::to_string(k));
  }
  auto h = embed_.front()(c);
  for (std::size_t i = 1; i < embed_.size(); ++i) h = embed_[i](relu(h));
  return h;
}

Tensor Aggregator::instance_embed(const Tensor& c_ins) const {
  const auto k = cfg_.patch_stride;
  const auto x = c_ins.rank() == 3 ? reshape(c_ins, {1, c_ins.dim(0), c_ins.dim(1), c_ins.dim(2)}) : c_ins;
  if (x.rank() != 4 || x.dim(2) != k || x.dim(3) != k) {
    throw ShapeError("instance_embed: expected ROI [C," + std::to_string(k) + "," + std::to_string(k) + "], got " +
                     to_string(c_ins.shape()));
  }
  const auto p = patch_embed(x);
  return reshape(p, {x.dim(0), cfg_.token_dim});
}

Tensor Aggregator::expand(const Tensor& z) const {
  auto h = deconv_.front()(z);
  for (std::size_t i = 1; i < deconv_.size(); ++i) h = deconv_[i](relu(h));
  return h;
}

AggregateOutput Aggregator::operator()(const Tensor& c, const BoxLists& boxes, const Tensor& s,
                                       AggregateTrace* trace) const {
  const auto batch = c.dim(0);
  if (static_cast<std::int64_t>(boxes.size()) != batch) {
    throw std::invalid_argument("aggregate: " + std::to_string(boxes.size()) + " box lists for batch " +
                                std::to_string(batch));
  }
  if (s.rank() != 2 || s.dim(0) != batch) {
    throw ShapeError("aggregate: expected style [B,l_s] with B=" + std::to_string(batch) + ", got " +
                     to_string(s.shape()));
  }
  const auto ls = s.dim(1);
  const auto d = cfg_.token_dim;
  const auto p = patch_embed(c);
  const auto gh = p.dim(2), gw = p.dim(3);
  const auto image_h = c.dim(2) * static_cast<std::int64_t>(kFeatureStride);
  const auto image_w = c.dim(3) * static_cast<std::int64_t>(kFeatureStride);

  AggregateOutput out;
  std::vector<Tensor> grids;
  if (trace) {
    trace->blocks.assign(static_cast<std::size_t>(batch), {});
    trace->tokens.clear();
  }
  for (std::int64_t b = 0; b < batch; ++b) {
    const auto& bx = boxes[static_cast<std::size_t>(b)];
    Tensor ins;
    std::vector<NormBox> geometry;
    if (!bx.empty()) {
      const auto cb = reshape(slice(c, 0, b, 1), {c.dim(1), c.dim(2), c.dim(3)});
      std::vector<Tensor> rois;
      for (const auto& box : bx) {
        validate_box(box, image_w, image_h);
        rois.push_back(reshape(roi_align(cb, box, cfg_.patch_stride, kFeatureStride),
                               {1, c.dim(1), cfg_.patch_stride, cfg_.patch_stride}));
        geometry.push_back(normalize(box, image_w, image_h));
      }
      ins = instance_embed(rois.size() == 1 ? rois.front() : concat(rois, 0));
    }
    const auto seq = build_tokens(reshape(slice(p, 0, b, 1), {d, gh, gw}), ins, geometry, cfg_.freq_bands());
    const auto sb = reshape(slice(s, 0, b, 1), {ls});
    auto z = seq.tokens;
    for (const auto& block : blocks_) {
      if (trace) {
        BlockTrace t;
        z = block(z, sb, &t);
        trace->blocks[static_cast<std::size_t>(b)].push_back(std::move(t));
      } else {
        z = block(z, sb);
      }
    }
    if (trace) trace->tokens.push_back(seq);
    const auto g = seq.grid_tokens();
    grids.push_back(reshape(permute(slice(z, 0, 0, g), {1, 0}), {1, d, gh, gw}));
    for (std::int64_t i = 0; i < seq.num_instances; ++i) out.u_ins.push_back(reshape(slice(z, 0, g + i, 1), {d}));
  }
  out.u = expand(grids.size() == 1 ? grids.front() : concat(grids, 0));
  return out;
}

void Aggregator::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < embed_.size(); ++i)
    embed_[i].collect(join_name(prefix, "patch_embed." + std::to_string(i)), out);
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect(join_name(prefix, "blocks." + std::to_string(i)), out);
  for (std::size_t i = 0; i < deconv_.size(); ++i)
    deconv_[i].collect(join_name(prefix, "deconv." + std::to_string(i)), out);
}

}  // namespace boxformer
