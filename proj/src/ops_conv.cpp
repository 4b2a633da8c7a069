#include <Eigen/Core>
#include <algorithm>
#include <memory>

#include "boxformer/ops.hpp"
#include "ops_internal.hpp"

namespace boxformer {

namespace {

using detail::finish;

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

struct Geometry {
  std::int64_t channels, height, width;  // image side
  std::int64_t kh, kw, stride, pad;
  std::int64_t out_h, out_w;  // column grid side
};

// Column matrix restricted to output rows [oy0, oy1):
// cols[(c*kh + ki)*kw + kj][(oy - oy0)*out_w + ox] = img[c][oy*s - p + ki][ox*s - p + kj]
void im2col(const Real* img, const Geometry& g, std::int64_t oy0, std::int64_t oy1, Real* cols) {
  const auto n = (oy1 - oy0) * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const Real* plane = img + c * g.height * g.width;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        Real* row = cols + ((c * g.kh + ki) * g.kw + kj) * n;
        for (std::int64_t oy = oy0; oy < oy1; ++oy) {
          const auto iy = oy * g.stride - g.pad + ki;
          Real* dst = row + (oy - oy0) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_w, Real(0));
            continue;
          }
          const Real* src = plane + iy * g.width;
          if (g.stride == 1) {
            const auto shift = kj - g.pad;
            const auto lo = std::clamp<std::int64_t>(-shift, 0, g.out_w);
            const auto hi = std::clamp<std::int64_t>(g.width - shift, lo, g.out_w);
            std::fill(dst, dst + lo, Real(0));
            std::copy(src + lo + shift, src + hi + shift, dst + lo);
            std::fill(dst + hi, dst + g.out_w, Real(0));
          } else {
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
              const auto ix = ox * g.stride - g.pad + kj;
              dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : Real(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col over the same output rows: accumulates into the image.
void col2im(const Real* cols, const Geometry& g, std::int64_t oy0, std::int64_t oy1, Real* img) {
  const auto n = (oy1 - oy0) * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    Real* plane = img + c * g.height * g.width;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const Real* row = cols + ((c * g.kh + ki) * g.kw + kj) * n;
        for (std::int64_t oy = oy0; oy < oy1; ++oy) {
          const auto iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          Real* dst = plane + iy * g.width;
          const Real* src = row + (oy - oy0) * g.out_w;
          if (g.stride == 1) {
            const auto shift = kj - g.pad;
            const auto lo = std::clamp<std::int64_t>(-shift, 0, g.out_w);
            const auto hi = std::clamp<std::int64_t>(g.width - shift, lo, g.out_w);
            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox + shift] += src[ox];
          } else {
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
              const auto ix = ox * g.stride - g.pad + kj;
              if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

// Output rows per column chunk, keeping each chunk around kChunkElems values
// so the column buffer stays cache resident.
constexpr std::int64_t kChunkElems = 1 << 15;

std::int64_t rows_per_chunk(std::int64_t kdim, std::int64_t out_w) {
  return std::max<std::int64_t>(1, kChunkElems / std::max<std::int64_t>(1, kdim * out_w));
}

using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

void reflect_pad(const Real* x, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t p, Real* out) {
  const auto hp = h + 2 * p;
  const auto wp = w + 2 * p;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < hp; ++i) {
      const Real* src = x + (ch * h + reflect_index(i - p, h)) * w;
      Real* dst = out + (ch * hp + i) * wp;
      for (std::int64_t j = 0; j < wp; ++j) dst[j] = src[reflect_index(j - p, w)];
    }
}

void reflect_unpad_accumulate(const Real* gpad, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t p,
                              Real* gx) {
  const auto hp = h + 2 * p;
  const auto wp = w + 2 * p;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < hp; ++i) {
      Real* dst = gx + (ch * h + reflect_index(i - p, h)) * w;
      const Real* src = gpad + (ch * hp + i) * wp;
      for (std::int64_t j = 0; j < wp; ++j) dst[reflect_index(j - p, w)] += src[j];
    }
}

void check_image(std::string_view op, const Tensor& x) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected [B,C,H,W] input, got " + to_string(x.shape()));
}

}  // namespace

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  const auto span = in + 2 * padding - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

std::int64_t conv_transpose_out_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                     std::int64_t padding, std::int64_t output_padding) {
  return (in - 1) * stride - 2 * padding + kernel + output_padding;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt) {
  check_image("conv2d", x);
  if (weight.rank() != 4 || weight.dim(1) != x.dim(1)) detail::shape_mismatch("conv2d", x.shape(), weight.shape());
  const auto batch = x.dim(0);
  const auto c = x.dim(1);
  const auto h = x.dim(2);
  const auto w = x.dim(3);
  const auto o = weight.dim(0);
  const auto kh = weight.dim(2);
  const auto kw = weight.dim(3);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) detail::shape_mismatch("conv2d", weight.shape(), bias.shape());
  if (opt.stride < 1 || opt.padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  const bool reflect = opt.pad_mode == PadMode::kReflect && opt.padding > 0;
  if (reflect && (opt.padding >= h || opt.padding >= w)) {
    throw ShapeError("conv2d: reflect padding " + std::to_string(opt.padding) + " too large for " + to_string(x.shape()));
  }
  const auto ho = conv_out_size(h, kh, opt.stride, opt.padding);
  const auto wo = conv_out_size(w, kw, opt.stride, opt.padding);
  if (ho < 1 || wo < 1) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " smaller than kernel " + to_string(weight.shape()));
  }
  const auto hp = reflect ? h + 2 * opt.padding : h;
  const auto wp = reflect ? w + 2 * opt.padding : w;
  const Geometry geo{c, hp, wp, kh, kw, opt.stride, reflect ? 0 : opt.padding, ho, wo};
  const auto ckk = c * kh * kw;
  const auto grid = ho * wo;
  const auto chunk = rows_per_chunk(ckk, wo);

  std::vector<Real> padded(reflect ? static_cast<std::size_t>(c * hp * wp) : 0);
  std::unique_ptr<Real[]> cols(new Real[static_cast<std::size_t>(ckk * chunk * wo)]);
  std::vector<Real> out(static_cast<std::size_t>(batch * o * grid));
  ConstMap wm(weight.ptr(), o, ckk);
  for (std::int64_t b = 0; b < batch; ++b) {
    const Real* xb = x.ptr() + b * c * h * w;
    if (reflect) {
      reflect_pad(xb, c, h, w, opt.padding, padded.data());
      xb = padded.data();
    }
    Real* yb = out.data() + b * o * grid;
    for (std::int64_t oy0 = 0; oy0 < ho; oy0 += chunk) {
      const auto oy1 = std::min(ho, oy0 + chunk);
      const auto n = (oy1 - oy0) * wo;
      im2col(xb, geo, oy0, oy1, cols.get());
      StridedMap(yb + oy0 * wo, o, n, Eigen::OuterStride<>(grid)).noalias() = wm * ConstMap(cols.get(), ckk, n);
    }
    if (bias.defined()) {
      for (std::int64_t oc = 0; oc < o; ++oc) {
        const Real bv = bias.ptr()[oc];
        for (std::int64_t i = 0; i < grid; ++i) yb[oc * grid + i] += bv;
      }
    }
  }
  return finish(
      "conv2d", {batch, o, ho, wo}, std::move(out), {&x, &weight, &bias},
      [x, weight, geo, reflect, pad = opt.padding, batch, c, h, w, o, ckk, grid, chunk](
          std::span<const Real> g, std::span<std::vector<Real>*> gin) {
        const auto ho = geo.out_h, wo = geo.out_w;
        const auto padded_size = reflect ? static_cast<std::size_t>(c * geo.height * geo.width) : 0;
        std::vector<Real> xpad(gin[1] ? padded_size : 0);
        std::vector<Real> gpad(gin[0] ? padded_size : 0);
        std::unique_ptr<Real[]> cols(new Real[static_cast<std::size_t>(ckk * chunk * wo)]);
        ConstMap wm(weight.ptr(), o, ckk);
        for (std::int64_t b = 0; b < batch; ++b) {
          const Real* gyb = g.data() + b * o * grid;
          if (gin[2]) {
            Real* gb = gin[2]->data();
            for (std::int64_t oc = 0; oc < o; ++oc) {
              Real acc = 0;
              for (std::int64_t i = 0; i < grid; ++i) acc += gyb[oc * grid + i];
              gb[oc] += acc;
            }
          }
          const Real* xb = x.ptr() + b * c * h * w;
          if (gin[1] && reflect) {
            reflect_pad(xb, c, h, w, pad, xpad.data());
            xb = xpad.data();
          }
          Real* gx = gin[0] ? gin[0]->data() + b * c * h * w : nullptr;
          if (gin[0] && reflect) std::fill(gpad.begin(), gpad.end(), Real(0));
          for (std::int64_t oy0 = 0; oy0 < ho; oy0 += chunk) {
            const auto oy1 = std::min(ho, oy0 + chunk);
            const auto n = (oy1 - oy0) * wo;
            ConstStridedMap gy(gyb + oy0 * wo, o, n, Eigen::OuterStride<>(grid));
            if (gin[1]) {
              im2col(xb, geo, oy0, oy1, cols.get());
              MutMap gw(gin[1]->data(), o, ckk);
              gw.noalias() += gy * ConstMap(cols.get(), ckk, n).transpose();
            }
            if (gin[0]) {
              MutMap(cols.get(), ckk, n).noalias() = wm.transpose() * gy;
              col2im(cols.get(), geo, oy0, oy1, reflect ? gpad.data() : gx);
            }
          }
          if (gin[0] && reflect) reflect_unpad_accumulate(gpad.data(), c, h, w, pad, gx);
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        const ConvTranspose2dOptions& opt) {
  check_image("conv_transpose2d", x);
  if (weight.rank() != 4 || weight.dim(0) != x.dim(1)) {
    detail::shape_mismatch("conv_transpose2d", x.shape(), weight.shape());
  }
  const auto batch = x.dim(0);
  const auto c = x.dim(1);
  const auto h = x.dim(2);
  const auto w = x.dim(3);
  const auto o = weight.dim(1);
  const auto kh = weight.dim(2);
  const auto kw = weight.dim(3);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) {
    detail::shape_mismatch("conv_transpose2d", weight.shape(), bias.shape());
  }
  if (opt.stride < 1 || opt.padding < 0 || opt.output_padding < 0 || opt.output_padding >= opt.stride) {
    throw ShapeError("conv_transpose2d: invalid stride/padding/output_padding");
  }
  const auto ho = conv_transpose_out_size(h, kh, opt.stride, opt.padding, opt.output_padding);
  const auto wo = conv_transpose_out_size(w, kw, opt.stride, opt.padding, opt.output_padding);
  if (ho < 1 || wo < 1) throw ShapeError("conv_transpose2d: empty output for " + to_string(x.shape()));
  // The column grid of the equivalent forward conv is the input grid here.
  const Geometry geo{o, ho, wo, kh, kw, opt.stride, opt.padding, h, w};
  const auto okk = o * kh * kw;
  const auto grid = h * w;
  const auto out_plane = ho * wo;
  const auto chunk = rows_per_chunk(okk, w);
  std::unique_ptr<Real[]> cols(new Real[static_cast<std::size_t>(okk * chunk * w)]);
  std::vector<Real> out(static_cast<std::size_t>(batch * o * out_plane), Real(0));
  ConstMap wm(weight.ptr(), c, okk);
  for (std::int64_t b = 0; b < batch; ++b) {
    const Real* xb = x.ptr() + b * c * grid;
    Real* yb = out.data() + b * o * out_plane;
    for (std::int64_t iy0 = 0; iy0 < h; iy0 += chunk) {
      const auto iy1 = std::min(h, iy0 + chunk);
      const auto n = (iy1 - iy0) * w;
      MutMap(cols.get(), okk, n).noalias() =
          wm.transpose() * ConstStridedMap(xb + iy0 * w, c, n, Eigen::OuterStride<>(grid));
      col2im(cols.get(), geo, iy0, iy1, yb);
    }
    if (bias.defined()) {
      for (std::int64_t oc = 0; oc < o; ++oc) {
        const Real bv = bias.ptr()[oc];
        for (std::int64_t i = 0; i < out_plane; ++i) yb[oc * out_plane + i] += bv;
      }
    }
  }
  return finish("conv_transpose2d", {batch, o, ho, wo}, std::move(out), {&x, &weight, &bias},
                [x, weight, geo, batch, c, o, okk, grid, out_plane, chunk](std::span<const Real> g,
                                                                           std::span<std::vector<Real>*> gin) {
                  const auto h = geo.out_h, w = geo.out_w;
                  std::unique_ptr<Real[]> cols(new Real[static_cast<std::size_t>(okk * chunk * w)]);
                  ConstMap wm(weight.ptr(), c, okk);
                  for (std::int64_t b = 0; b < batch; ++b) {
                    const Real* gy = g.data() + b * o * out_plane;
                    if (gin[2]) {
                      Real* gb = gin[2]->data();
                      for (std::int64_t oc = 0; oc < o; ++oc) {
                        Real acc = 0;
                        for (std::int64_t i = 0; i < out_plane; ++i) acc += gy[oc * out_plane + i];
                        gb[oc] += acc;
                      }
                    }
                    if (!gin[0] && !gin[1]) continue;
                    for (std::int64_t iy0 = 0; iy0 < h; iy0 += chunk) {
                      const auto iy1 = std::min(h, iy0 + chunk);
                      const auto n = (iy1 - iy0) * w;
                      im2col(gy, geo, iy0, iy1, cols.get());
                      ConstMap cm(cols.get(), okk, n);
                      if (gin[0]) {
                        StridedMap(gin[0]->data() + b * c * grid + iy0 * w, c, n, Eigen::OuterStride<>(grid))
                            .noalias() += wm * cm;
                      }
                      if (gin[1]) {
                        MutMap gw(gin[1]->data(), c, okk);
                        gw.noalias() +=
                            ConstStridedMap(x.ptr() + b * c * grid + iy0 * w, c, n, Eigen::OuterStride<>(grid)) *
                            cm.transpose();
                      }
                    }
                  }
                });
}

Tensor avg_pool2x2(const Tensor& x) {
  check_image("avg_pool2x2", x);
  const auto planes = x.dim(0) * x.dim(1);
  const auto h = x.dim(2);
  const auto w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2x2: odd spatial size " + to_string(x.shape()));
  const auto ho = h / 2;
  const auto wo = w / 2;
  std::vector<Real> out(static_cast<std::size_t>(planes * ho * wo));
  const Real* px = x.ptr();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j) {
        const Real* s = px + (p * h + 2 * i) * w + 2 * j;
        out[static_cast<std::size_t>((p * ho + i) * wo + j)] = Real(0.25) * (s[0] + s[1] + s[w] + s[w + 1]);
      }
  return finish("avg_pool2x2", {x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x},
                [planes, h, w, ho, wo](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  Real* gx = gin[0]->data();
                  for (std::int64_t p = 0; p < planes; ++p)
                    for (std::int64_t i = 0; i < ho; ++i)
                      for (std::int64_t j = 0; j < wo; ++j) {
                        const Real v = Real(0.25) * g[static_cast<std::size_t>((p * ho + i) * wo + j)];
                        Real* d = gx + (p * h + 2 * i) * w + 2 * j;
                        d[0] += v;
                        d[1] += v;
                        d[w] += v;
                        d[w + 1] += v;
                      }
                });
}

Tensor upsample_nearest2x(const Tensor& x) {
  check_image("upsample_nearest2x", x);
  const auto planes = x.dim(0) * x.dim(1);
  const auto h = x.dim(2);
  const auto w = x.dim(3);
  const auto ho = 2 * h;
  const auto wo = 2 * w;
  std::vector<Real> out(static_cast<std::size_t>(planes * ho * wo));
  const Real* px = x.ptr();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j)
        out[static_cast<std::size_t>((p * ho + i) * wo + j)] = px[(p * h + i / 2) * w + j / 2];
  return finish("upsample_nearest2x", {x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x},
                [planes, h, w, ho, wo](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  Real* gx = gin[0]->data();
                  for (std::int64_t p = 0; p < planes; ++p)
                    for (std::int64_t i = 0; i < ho; ++i)
                      for (std::int64_t j = 0; j < wo; ++j)
                        gx[(p * h + i / 2) * w + j / 2] += g[static_cast<std::size_t>((p * ho + i) * wo + j)];
                });
}

}  // namespace boxformer
