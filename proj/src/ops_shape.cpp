#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "boxformer/ops.hpp"
#include "ops_internal.hpp"

namespace boxformer {

namespace {

using detail::contiguous_strides;
using detail::finish;

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred dimension");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  if (numel(shape) != x.numel()) detail::shape_mismatch("reshape", x.shape(), shape);
  std::vector<Real> out(x.data().begin(), x.data().end());
  return finish("reshape", std::move(shape), std::move(out), {&x},
                [](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  Real* gx = gin[0]->data();
                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                });
}

Tensor permute(const Tensor& x, std::vector<std::int64_t> order) {
  const auto rank = x.rank();
  if (static_cast<std::int64_t>(order.size()) != rank) {
    throw ShapeError("permute: order length does not match rank of " + to_string(x.shape()));
  }
  std::vector<bool> seen(order.size(), false);
  Shape out_shape(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = detail::normalize_axis(order[i], rank, "permute");
    if (seen[static_cast<std::size_t>(order[i])]) throw ShapeError("permute: repeated axis");
    seen[static_cast<std::size_t>(order[i])] = true;
    out_shape[i] = x.shape()[static_cast<std::size_t>(order[i])];
  }
  const auto in_strides = contiguous_strides(x.shape());
  std::vector<std::int64_t> gather(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) gather[i] = in_strides[static_cast<std::size_t>(order[i])];
  const auto out_strides = contiguous_strides(out_shape);
  // Map output index -> input offset once; reused by backward.
  auto offsets = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(x.numel()));
  detail::for_each_broadcast(out_shape, out_strides, gather,
                             [&](std::int64_t i, std::int64_t, std::int64_t ix) {
                               (*offsets)[static_cast<std::size_t>(i)] = ix;
                             });
  std::vector<Real> out(offsets->size());
  const Real* px = x.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[(*offsets)[i]];
  return finish("permute", std::move(out_shape), std::move(out), {&x},
                [offsets](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  Real* gx = gin[0]->data();
                  for (std::size_t i = 0; i < g.size(); ++i) gx[(*offsets)[i]] += g[i];
                });
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto rank = parts[0].rank();
  axis = detail::normalize_axis(axis, rank, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) detail::shape_mismatch("concat", parts[0].shape(), p.shape());
    for (std::int64_t d = 0; d < rank; ++d) {
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] != parts[0].shape()[static_cast<std::size_t>(d)]) {
        detail::shape_mismatch("concat", parts[0].shape(), p.shape());
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += p.shape()[static_cast<std::size_t>(axis)];
  }
  std::int64_t outer = 1;
  std::int64_t inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
  for (std::int64_t d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<std::size_t>(d)];
  const auto total_n = out_shape[static_cast<std::size_t>(axis)];
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[static_cast<std::size_t>(axis)] * inner);
  std::vector<Real> out(static_cast<std::size_t>(numel(out_shape)));
  std::int64_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Real* src = parts[k].ptr();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * widths[k], widths[k], out.data() + o * total_n * inner + col);
    }
    col += widths[k];
  }
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return finish("concat", std::move(out_shape), std::move(out), inputs,
                [widths, outer, row = total_n * inner](std::span<const Real> g,
                                                       std::span<std::vector<Real>*> gin) {
                  std::int64_t c = 0;
                  for (std::size_t k = 0; k < widths.size(); ++k) {
                    if (gin[k]) {
                      Real* gx = gin[k]->data();
                      for (std::int64_t o = 0; o < outer; ++o)
                        for (std::int64_t j = 0; j < widths[k]; ++j)
                          gx[o * widths[k] + j] += g[static_cast<std::size_t>(o * row + c + j)];
                    }
                    c += widths[k];
                  }
                });
}

Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length) {
  axis = detail::normalize_axis(axis, x.rank(), "slice");
  const auto n = x.shape()[static_cast<std::size_t>(axis)];
  if (start < 0 || length < 0 || start + length > n) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for axis of size " + std::to_string(n));
  }
  std::int64_t outer = 1;
  std::int64_t inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape()[static_cast<std::size_t>(d)];
  for (std::int64_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape()[static_cast<std::size_t>(d)];
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  std::vector<Real> out(static_cast<std::size_t>(outer * length * inner));
  const Real* px = x.ptr();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(px + (o * n + start) * inner, length * inner, out.data() + o * length * inner);
  }
  return finish("slice", std::move(out_shape), std::move(out), {&x},
                [outer, inner, n, start, length](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  Real* gx = gin[0]->data();
                  for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t j = 0; j < length * inner; ++j)
                      gx[(o * n + start) * inner + j] += g[static_cast<std::size_t>(o * length * inner + j)];
                });
}

Tensor index_select(const Tensor& x, std::int64_t axis, std::vector<std::int64_t> indices) {
  axis = detail::normalize_axis(axis, x.rank(), "index_select");
  const auto n = x.shape()[static_cast<std::size_t>(axis)];
  for (auto i : indices) {
    if (i < 0 || i >= n) throw ShapeError("index_select: index " + std::to_string(i) + " out of range");
  }
  std::int64_t outer = 1;
  std::int64_t inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= x.shape()[static_cast<std::size_t>(d)];
  for (std::int64_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape()[static_cast<std::size_t>(d)];
  const auto m = static_cast<std::int64_t>(indices.size());
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = m;
  std::vector<Real> out(static_cast<std::size_t>(outer * m * inner));
  const Real* px = x.ptr();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t k = 0; k < m; ++k)
      std::copy_n(px + (o * n + indices[static_cast<std::size_t>(k)]) * inner, inner,
                  out.data() + (o * m + k) * inner);
  return finish("index_select", std::move(out_shape), std::move(out), {&x},
                [outer, inner, n, m, idx = std::move(indices)](std::span<const Real> g,
                                                               std::span<std::vector<Real>*> gin) {
                  Real* gx = gin[0]->data();
                  for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t k = 0; k < m; ++k)
                      for (std::int64_t j = 0; j < inner; ++j)
                        gx[(o * n + idx[static_cast<std::size_t>(k)]) * inner + j] +=
                            g[static_cast<std::size_t>((o * m + k) * inner + j)];
                });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const auto m = a.dim(-2);
  const auto k = a.dim(-1);
  const auto n = b.dim(-1);
  if (b.dim(-2) != k) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const bool shared_b = batch_b.empty();
  if (!shared_b && batch_a != batch_b) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const auto batch = numel(batch_a);
  Shape out_shape = batch_a;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<Real> out(static_cast<std::size_t>(batch * m * n));
  for (std::int64_t i = 0; i < batch; ++i) {
    ConstMap ma(a.ptr() + i * m * k, m, k);
    ConstMap mb(b.ptr() + (shared_b ? 0 : i * k * n), k, n);
    MutMap mo(out.data() + i * m * n, m, n);
    mo.noalias() = ma * mb;
  }
  return finish("matmul", std::move(out_shape), std::move(out), {&a, &b},
                [a, b, batch, m, k, n, shared_b](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  for (std::int64_t i = 0; i < batch; ++i) {
                    ConstMap mg(g.data() + i * m * n, m, n);
                    if (gin[0]) {
                      ConstMap mb(b.ptr() + (shared_b ? 0 : i * k * n), k, n);
                      MutMap ga(gin[0]->data() + i * m * k, m, k);
                      ga.noalias() += mg * mb.transpose();
                    }
                    if (gin[1]) {
                      ConstMap ma(a.ptr() + i * m * k, m, k);
                      MutMap gb(gin[1]->data() + (shared_b ? 0 : i * k * n), k, n);
                      gb.noalias() += ma.transpose() * mg;
                    }
                  }
                });
}

Tensor bilinear_sample(const Tensor& map, std::span<const Point2> points) {
  if (points.empty()) throw ShapeError("bilinear_sample: empty point list");
  Shape s = map.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3) throw ShapeError("bilinear_sample: expected [C,H,W] map, got " + to_string(map.shape()));
  const auto c = s[0];
  const auto h = s[1];
  const auto w = s[2];
  const auto p = static_cast<std::int64_t>(points.size());
  struct Tap {
    std::int64_t i00, i01, i10, i11;
    Real w00, w01, w10, w11;
  };
  auto taps = std::make_shared<std::vector<Tap>>(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) {
    const double px = std::clamp(points[k].x - 0.5, 0.0, static_cast<double>(w - 1));
    const double py = std::clamp(points[k].y - 0.5, 0.0, static_cast<double>(h - 1));
    const auto x0 = static_cast<std::int64_t>(std::floor(px));
    const auto y0 = static_cast<std::int64_t>(std::floor(py));
    const auto x1 = std::min(x0 + 1, w - 1);
    const auto y1 = std::min(y0 + 1, h - 1);
    const Real fx = static_cast<Real>(px - static_cast<double>(x0));
    const Real fy = static_cast<Real>(py - static_cast<double>(y0));
    (*taps)[k] = Tap{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1,
                     (1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
  }
  std::vector<Real> out(static_cast<std::size_t>(p * c));
  const Real* pm = map.ptr();
  for (std::int64_t k = 0; k < p; ++k) {
    const auto& t = (*taps)[static_cast<std::size_t>(k)];
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const Real* plane = pm + ch * h * w;
      out[static_cast<std::size_t>(k * c + ch)] =
          t.w00 * plane[t.i00] + t.w01 * plane[t.i01] + t.w10 * plane[t.i10] + t.w11 * plane[t.i11];
    }
  }
  return finish("bilinear_sample", {p, c}, std::move(out), {&map},
                [taps, c, h, w, p](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  Real* gm = gin[0]->data();
                  for (std::int64_t k = 0; k < p; ++k) {
                    const auto& t = (*taps)[static_cast<std::size_t>(k)];
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                      Real* plane = gm + ch * h * w;
                      const Real gv = g[static_cast<std::size_t>(k * c + ch)];
                      plane[t.i00] += t.w00 * gv;
                      plane[t.i01] += t.w01 * gv;
                      plane[t.i10] += t.w10 * gv;
                      plane[t.i11] += t.w11 * gv;
                    }
                  }
                });
}

}  // namespace boxformer
