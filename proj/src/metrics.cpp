#include "boxformer/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace boxformer {

double ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg) {
  if (a.shape() != b.shape() || a.rank() != 3) {
    throw ShapeError("ssim: shapes " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const auto ch = a.dim(0), h = a.dim(1), w = a.dim(2);
  const auto win = cfg.window;
  if (h < win || w < win) {
    throw ShapeError("ssim: image " + to_string(a.shape()) + " smaller than the " + std::to_string(win) + "x" +
                     std::to_string(win) + " window");
  }
  const double c1 = cfg.c1(), c2 = cfg.c2();
  const double n = static_cast<double>(win * win);
  const auto da = a.data(), db = b.data();
  double total = 0;
  for (std::int64_t c = 0; c < ch; ++c) {
    for (std::int64_t y = 0; y + win <= h; ++y)
      for (std::int64_t x = 0; x + win <= w; ++x) {
        double sa = 0, sb = 0;
        for (std::int64_t i = 0; i < win; ++i)
          for (std::int64_t j = 0; j < win; ++j) {
            const auto k = static_cast<std::size_t>((c * h + y + i) * w + x + j);
            sa += da[k];
            sb += db[k];
          }
        const double ma = sa / n, mb = sb / n;
        double vaa = 0, vbb = 0, vab = 0;
        for (std::int64_t i = 0; i < win; ++i)
          for (std::int64_t j = 0; j < win; ++j) {
            const auto k = static_cast<std::size_t>((c * h + y + i) * w + x + j);
            const double ea = da[k] - ma, eb = db[k] - mb;
            vaa += ea * ea;
            vbb += eb * eb;
            vab += ea * eb;
          }
        vaa /= n;
        vbb /= n;
        vab /= n;
        total += ((2 * ma * mb + c1) * (2 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
      }
  }
  const auto windows = static_cast<double>((h - win + 1) * (w - win + 1) * ch);
  return total / windows;
}

Tensor crop_box(const Tensor& image, const BoundingBox& box) {
  const auto h = image.dim(1), w = image.dim(2);
  auto x0 = static_cast<std::int64_t>(std::lround(box.cx - box.w / 2));
  auto y0 = static_cast<std::int64_t>(std::lround(box.cy - box.h / 2));
  auto x1 = static_cast<std::int64_t>(std::lround(box.cx + box.w / 2));
  auto y1 = static_cast<std::int64_t>(std::lround(box.cy + box.h / 2));
  x0 = std::clamp<std::int64_t>(x0, 0, w);
  y0 = std::clamp<std::int64_t>(y0, 0, h);
  x1 = std::clamp<std::int64_t>(x1, x0, w);
  y1 = std::clamp<std::int64_t>(y1, y0, h);
  NoGradScope no_grad;
  if (x1 == x0 || y1 == y0) throw std::invalid_argument("crop_box: empty crop");
  return slice(slice(image, 1, y0, y1 - y0), 2, x0, x1 - x0);
}

double instance_ssim(const Tensor& a, const Tensor& b, const std::vector<BoundingBox>& boxes, const SsimConfig& cfg) {
  if (a.shape() != b.shape()) throw ShapeError("instance_ssim: shapes " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  double total = 0;
  std::int64_t used = 0;
  for (const auto& box : boxes) {
    if (box.w < static_cast<double>(cfg.window) || box.h < static_cast<double>(cfg.window)) continue;
    const auto ca = crop_box(a, box);
    if (ca.dim(1) < cfg.window || ca.dim(2) < cfg.window) continue;
    total += ssim(ca, crop_box(b, box), cfg);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("instance_ssim: no box is at least as large as the SSIM window");
  return total / static_cast<double>(used);
}

double palette_distance(const Tensor& image, Domain domain) {
  const auto stats = channel_stats(image);
  const auto ref = background_stats(domain, image.dim(1));
  double d = 0;
  for (std::size_t i = 0; i < stats.size(); ++i) d += (stats[i] - ref[i]) * (stats[i] - ref[i]);
  return std::sqrt(d);
}

}  // namespace boxformer
