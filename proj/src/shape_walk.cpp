#include "boxformer/shape_walk.hpp"

#include <cstdio>

namespace boxformer {

namespace {

std::string conv_params(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t s, std::int64_t p) {
  return "(" + std::to_string(in) + "," + std::to_string(out) + "," + std::to_string(k) + "," + std::to_string(s) +
         "," + std::to_string(p) + ")";
}

std::string linear_params(std::int64_t in, std::int64_t out) {
  return "(" + std::to_string(in) + "," + std::to_string(out) + ")";
}

std::int64_t out_size(std::int64_t n, std::int64_t k, std::int64_t s, std::int64_t p) { return (n + 2 * p - k) / s + 1; }

class Walker {
 public:
  explicit Walker(std::vector<LayerRow>& rows) : rows_(rows) {}

  void conv(const std::string& net, const std::string& layer, const std::string& weight, std::int64_t out,
            std::int64_t k, std::int64_t s, std::int64_t p) {
    const auto in = c_;
    c_ = out;
    h_ = out_size(h_, k, s, p);
    w_ = out_size(w_, k, s, p);
    rows_.push_back({net, layer, conv_params(in, out, k, s, p), {c_, h_, w_}, weight, {out, in, k, k}});
  }
  void deconv(const std::string& net, const std::string& layer, const std::string& weight, std::int64_t out,
              std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t op) {
    const auto in = c_;
    c_ = out;
    h_ = (h_ - 1) * s - 2 * p + k + op;
    w_ = (w_ - 1) * s - 2 * p + k + op;
    rows_.push_back({net, layer, conv_params(in, out, k, s, p), {c_, h_, w_}, weight, {in, out, k, k}});
  }
  void same(const std::string& net, const std::string& layer) { rows_.push_back({net, layer, "-", {c_, h_, w_}, "", {}}); }
  void resize(const std::string& net, const std::string& layer, std::int64_t h, std::int64_t w) {
    h_ = h;
    w_ = w;
    same(net, layer);
  }
  void linear(const std::string& net, const std::string& layer, const std::string& weight, std::int64_t in,
              std::int64_t out) {
    rows_.push_back({net, layer, linear_params(in, out), {out}, weight, {in, out}});
  }
  void token(const std::string& net, const std::string& layer, std::int64_t d) {
    rows_.push_back({net, layer, "-", {d}, "", {}});
  }
  void start(std::int64_t c, std::int64_t h, std::int64_t w) {
    c_ = c;
    h_ = h;
    w_ = w;
  }
  std::int64_t h() const { return h_; }

 private:
  std::vector<LayerRow>& rows_;
  std::int64_t c_ = 0, h_ = 0, w_ = 0;
};

void encoder_trunk(Walker& w, const std::string& net, const std::string& prefix, const BackboneConfig& b) {
  const auto l = b.base_channels;
  w.start(3, b.image_size, b.image_size);
  w.conv(net, "Conv-1 (Reflection)", prefix + ".conv1.weight", l, 7, 1, 3);
  w.same(net, "InstanceNorm");
  w.same(net, "ReLU");
  w.conv(net, "Conv-2 (Zeros)", prefix + ".conv2.weight", 2 * l, 3, 1, 1);
  w.same(net, "InstanceNorm");
  w.same(net, "ReLU");
  w.resize(net, "Downsample", w.h() / 2, w.h() / 2);
  w.conv(net, "Conv-3 (Zeros)", prefix + ".conv3.weight", b.content_channels, 3, 1, 1);
  w.same(net, "InstanceNorm");
  w.same(net, "ReLU");
  w.resize(net, "DownSample", w.h() / 2, w.h() / 2);
}

}  // namespace

std::vector<LayerRow> shape_walk(const ModelConfig& cfg) {
  cfg.validate();
  const auto& b = cfg.backbone;
  const auto& a = cfg.aggregator;
  std::vector<LayerRow> rows;
  Walker w(rows);

  encoder_trunk(w, "Encoder", "content_encoder", b);
  encoder_trunk(w, "Style", "style_encoder", b);
  w.resize("Style", "AdaptiveAvgPool", 1, 1);
  w.conv("Style", "Conv-4", "style_encoder.conv4.weight", b.style_dim, 1, 1, 0);

  const auto d = a.token_dim;
  const auto fs = b.feature_size();
  w.start(b.content_channels, fs, fs);
  std::int64_t stages = 0;
  for (auto k = a.patch_stride; k > 1; k /= 2) ++stages;
  if (stages == 0) {
    w.conv("Aggregator", "PatchEmbed-1", "aggregator.patch_embed.0.weight", d, 3, 1, 1);
  } else {
    for (std::int64_t i = 0; i < stages; ++i) {
      w.conv("Aggregator", "PatchEmbed-" + std::to_string(i + 1),
             "aggregator.patch_embed." + std::to_string(i) + ".weight", d, 3, 2, 1);
      if (i + 1 < stages) w.same("Aggregator", "ReLU");
    }
  }
  const std::string blk = "aggregator.blocks.0.";
  w.token("Aggregator", "AdaptiveInstanceNorm", d);
  w.linear("Aggregator", "Linear-1", blk + "qkv.weight", d, 3 * d);
  w.token("Aggregator", "Attention", d);
  w.linear("Aggregator", "Linear-2", blk + "proj.weight", d, d);
  w.token("Aggregator", "AdaptiveInstanceNorm", d);
  w.linear("Aggregator", "Linear-3", blk + "fc1.weight", d, a.mlp_dim);
  w.token("Aggregator", "GELU", a.mlp_dim);
  w.linear("Aggregator", "Linear-4", blk + "fc2.weight", a.mlp_dim, d);
  w.start(d, fs / a.patch_stride, fs / a.patch_stride);
  if (stages == 0) {
    w.deconv("Aggregator", "DeConv-1", "aggregator.deconv.0.weight", b.content_channels, 3, 1, 1, 0);
  } else {
    for (std::int64_t i = 0; i < stages; ++i) {
      w.deconv("Aggregator", "DeConv-" + std::to_string(i + 1), "aggregator.deconv." + std::to_string(i) + ".weight",
               i + 1 == stages ? b.content_channels : d, 3, 2, 1, 1);
      if (i + 1 < stages) w.same("Aggregator", "ReLU");
    }
  }

  const auto l = b.base_channels;
  w.start(b.content_channels, fs, fs);
  w.resize("Generator", "UpSample", 2 * fs, 2 * fs);
  w.conv("Generator", "Conv-1 (Zeros)", "generator.conv1.weight", 2 * l, 3, 1, 1);
  w.same("Generator", "InstanceNorm");
  w.same("Generator", "ReLU");
  w.resize("Generator", "UpSample", 4 * fs, 4 * fs);
  w.conv("Generator", "Conv-2 (Zeros)", "generator.conv2.weight", l, 3, 1, 1);
  w.same("Generator", "InstanceNorm");
  w.same("Generator", "ReLU");
  w.conv("Generator", "Conv-3 (ReflectionPad)", "generator.conv3.weight", 3, 7, 1, 3);
  w.same("Generator", "Tanh");

  w.start(3, b.image_size, b.image_size);
  w.conv("Discriminator", "Conv-1", "discriminator.conv1.weight", l, 4, 2, 1);
  w.same("Discriminator", "LeakyReLU");
  w.conv("Discriminator", "Conv-2", "discriminator.conv2.weight", 2 * l, 4, 2, 1);
  w.same("Discriminator", "InstanceNorm");
  w.same("Discriminator", "LeakyReLU");
  w.conv("Discriminator", "Conv-3", "discriminator.conv3.weight", 4 * l, 4, 2, 1);
  w.same("Discriminator", "InstanceNorm");
  w.same("Discriminator", "LeakyReLU");
  w.conv("Discriminator", "Conv-4", "discriminator.conv4.weight", 8 * l, 4, 1, 1);
  w.same("Discriminator", "InstanceNorm");
  w.same("Discriminator", "LeakyReLU");
  w.conv("Discriminator", "Conv-5", "discriminator.conv5.weight", 1, 4, 1, 1);
  return rows;
}

std::string format_shape_walk(const std::vector<LayerRow>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %-24s %-22s %s\n", "network", "layer", "params", "output");
  out += line;
  for (const auto& r : rows) {
    std::string shape = "(";
    for (std::size_t i = 0; i < r.output.size(); ++i) shape += (i ? "," : "") + std::to_string(r.output[i]);
    shape += ")";
    std::snprintf(line, sizeof(line), "%-14s %-24s %-22s %s\n", r.network.c_str(), r.layer.c_str(), r.params.c_str(),
                  shape.c_str());
    out += line;
  }
  return out;
}

}  // namespace boxformer
