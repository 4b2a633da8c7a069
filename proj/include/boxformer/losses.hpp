#pragma once

#include <string>
#include <vector>

#include "boxformer/aggregator.hpp"
#include "boxformer/backbone.hpp"

namespace boxformer {

enum class GanMode { kLogistic, kLeastSquares };

GanMode gan_mode_from_string(const std::string& name);
std::string to_string(GanMode mode);

struct GanLosses {
  Tensor loss_d;
  Tensor loss_g;
};

/// Logistic: loss_d = -E[log D(y)] - E[log(1 - D(y_hat))] and the
/// non-saturating loss_g = -E[log D(y_hat)], with D = sigmoid(logit) and
/// means over all patch logits. Least squares: (D(y)-1)^2 + D(y_hat)^2 and
/// (D(y_hat)-1)^2.
GanLosses gan_losses(const Tensor& d_real, const Tensor& d_fake, GanMode mode = GanMode::kLogistic);
Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake, GanMode mode = GanMode::kLogistic);
Tensor generator_adversarial_loss(const Tensor& d_fake, GanMode mode = GanMode::kLogistic);

/// -log(exp(a.p/t) / (exp(a.p/t) + sum_n exp(a.n/t))). anchor, positive: [D];
/// negatives: [n, D] with n >= 1.
Tensor info_nce(const Tensor& anchor, const Tensor& positive, const Tensor& negatives, double tau);

/// Mean info_nce over rows s of anchors [S, D], where row s of keys [S, D]
/// is the positive and the other rows are the negatives.
Tensor patch_nce(const Tensor& anchors, const Tensor& keys, double tau);

/// Rows scaled to unit L2 norm.
Tensor l2_normalize_rows(const Tensor& x);

struct NceConfig {
  double temperature = 0.07;
  std::vector<std::string> layers{"conv1", "conv2", "content"};
  std::int64_t patches_per_layer = 64;
  std::int64_t projection_dim = 128;
  std::int64_t hidden_dim = 256;
  std::int64_t instance_grid = 4;  // r; M_i = r^2 cells per instance

  void validate() const;
};

/// Tap name -> activation. Names: conv1, conv2, content.
const Tensor& encoder_tap(const EncoderFeatures& f, const std::string& name);
std::int64_t encoder_tap_channels(const BackboneConfig& cfg, const std::string& name);

/// Linear -> ReLU -> Linear, rows L2-normalized.
struct ProjectionHead {
  Linear fc1, fc2;

  ProjectionHead() = default;
  ProjectionHead(std::int64_t in, std::int64_t hidden, std::int64_t out, Rng& rng);

  /// [S, in] -> [S, out] with unit rows.
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out);
};

/// Spatial indices per [layer][sample], each of length S_l.
using PatchLocations = std::vector<std::vector<std::vector<std::int64_t>>>;

PatchLocations sample_patch_locations(const EncoderFeatures& f, const NceConfig& cfg, Rng& rng);

/// Rows [S, C] of features [B, C, H, W] for sample b at flat spatial indices.
Tensor gather_locations(const Tensor& features, std::int64_t b, const std::vector<std::int64_t>& indices);

/// Patch-wise contrastive loss between x features (keys, detached) and
/// y_hat features (anchors), averaged over layers, samples and locations.
Tensor global_content_loss(const EncoderFeatures& fx, const EncoderFeatures& fy,
                           const std::vector<ProjectionHead>& heads, const NceConfig& cfg,
                           const PatchLocations& locations);
Tensor global_content_loss(const EncoderFeatures& fx, const EncoderFeatures& fy,
                           const std::vector<ProjectionHead>& heads, const NceConfig& cfg, Rng& rng);

/// Detached key projections of the x-side features, the constants of the
/// contrastive problems: [layer][sample] -> [S, projection_dim].
using NceKeys = std::vector<std::vector<Tensor>>;
NceKeys global_nce_keys(const EncoderFeatures& fx, const std::vector<ProjectionHead>& heads, const NceConfig& cfg,
                        const PatchLocations& locations);
Tensor global_content_loss(const NceKeys& keys, const EncoderFeatures& fy, const std::vector<ProjectionHead>& heads,
                           const NceConfig& cfg, const PatchLocations& locations);

/// [sample][box] -> [r*r, projection_dim]; undefined for invalid boxes.
using InstanceKeys = std::vector<std::vector<Tensor>>;
InstanceKeys instance_nce_keys(const Tensor& content_x, const BoxLists& boxes, const ProjectionHead& head,
                               const NceConfig& cfg);
Tensor instance_content_loss(const InstanceKeys& keys, const Tensor& content_y, const BoxLists& boxes,
                             const ProjectionHead& head, const NceConfig& cfg, std::int64_t* skipped = nullptr);

/// r x r ROI cells of the final content features of x and y_hat, one
/// contrastive problem per instance; averaged over cells and instances.
/// Returns exactly 0 when there are no valid boxes. `skipped` receives the
/// number of degenerate boxes that were filtered.
Tensor instance_content_loss(const Tensor& content_x, const Tensor& content_y, const BoxLists& boxes,
                             const ProjectionHead& head, const NceConfig& cfg, std::int64_t* skipped = nullptr);

/// Mean absolute error over all pixels.
Tensor image_recon_loss(const Tensor& reconstruction, const Tensor& y);
/// Mean absolute error over style dimensions.
Tensor style_recon_loss(const Tensor& style_hat, const Tensor& style);

struct LossWeights {
  double global = 1;
  double instance = 1;
  double style = 10;
  double image = 5;

  void validate() const;
};

struct LossReport {
  double gan_d = 0;
  double gan_g = 0;
  double nce_global = 0;
  double nce_instance = 0;
  double recon_img = 0;
  double recon_style = 0;
  double total = 0;

  bool operator==(const LossReport&) const = default;
};

double total_loss(double gan_g, double nce_global, double nce_instance, double recon_style, double recon_img,
                  const LossWeights& w);
Tensor total_loss(const Tensor& gan_g, const Tensor& nce_global, const Tensor& nce_instance,
                  const Tensor& recon_style, const Tensor& recon_img, const LossWeights& w);

}  // namespace boxformer
