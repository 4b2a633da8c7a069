#include <algorithm>
#include <cmath>
#include <limits>

#include "boxformer/ops.hpp"
#include "ops_internal.hpp"

namespace boxformer {

namespace {

using detail::broadcast_strides;
using detail::contiguous_strides;
using detail::finish;
using detail::for_each_broadcast;

struct Reduction {
  Shape kept;  // input rank, reduced dims set to 1
  Shape out;   // final output shape
  std::int64_t count = 1;
};

Reduction plan_reduction(const Shape& in, std::vector<std::int64_t> axes, bool keepdim,
                         std::string_view op) {
  const auto rank = static_cast<std::int64_t>(in.size());
  std::vector<bool> reduced(in.size(), false);
  for (auto a : axes) reduced[static_cast<std::size_t>(detail::normalize_axis(a, rank, op))] = true;
  Reduction r;
  r.kept = in;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (reduced[d]) {
      r.count *= in[d];
      r.kept[d] = 1;
    } else if (!keepdim) {
      r.out.push_back(in[d]);
    }
  }
  if (keepdim) r.out = r.kept;
  if (r.out.empty()) r.out = {1};
  return r;
}

// Sums x into the reduced layout; the traversal order is the row-major input
// order, which fixes the accumulation order.
std::vector<Real> reduce_sum(const Tensor& x, const Reduction& r) {
  std::vector<Real> out(static_cast<std::size_t>(numel(r.kept)), Real(0));
  const Real* px = x.ptr();
  const auto sx = contiguous_strides(x.shape());
  const auto so = broadcast_strides(r.kept, x.shape());
  for_each_broadcast(x.shape(), sx, so,
                     [&](std::int64_t, std::int64_t ix, std::int64_t io) { out[io] += px[ix]; });
  return out;
}

void scatter_back(std::span<const Real> g, Real factor, const Shape& in_shape, const Shape& kept,
                  Real* gx) {
  const auto sx = contiguous_strides(in_shape);
  const auto so = broadcast_strides(kept, in_shape);
  for_each_broadcast(in_shape, sx, so, [&](std::int64_t, std::int64_t ix, std::int64_t io) {
    gx[ix] += g[static_cast<std::size_t>(io)] * factor;
  });
}

std::vector<std::int64_t> all_axes(const Tensor& x) {
  std::vector<std::int64_t> axes(static_cast<std::size_t>(x.rank()));
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<std::int64_t>(i);
  return axes;
}

struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t n = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::int64_t axis) {
  AxisSplit r;
  for (std::int64_t d = 0; d < static_cast<std::int64_t>(s.size()); ++d) {
    const auto v = s[static_cast<std::size_t>(d)];
    if (d < axis) r.outer *= v;
    else if (d == axis) r.n = v;
    else r.inner *= v;
  }
  return r;
}

}  // namespace

Tensor sum(const Tensor& x, std::vector<std::int64_t> axes, bool keepdim) {
  const auto r = plan_reduction(x.shape(), std::move(axes), keepdim, "sum");
  auto out = reduce_sum(x, r);
  return finish("sum", r.out, std::move(out), {&x},
                [x, r](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  scatter_back(g, Real(1), x.shape(), r.kept, gin[0]->data());
                });
}

Tensor mean(const Tensor& x, std::vector<std::int64_t> axes, bool keepdim) {
  const auto r = plan_reduction(x.shape(), std::move(axes), keepdim, "mean");
  auto out = reduce_sum(x, r);
  const Real inv = Real(1) / static_cast<Real>(r.count);
  for (auto& v : out) v *= inv;
  return finish("mean", r.out, std::move(out), {&x},
                [x, r, inv](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  scatter_back(g, inv, x.shape(), r.kept, gin[0]->data());
                });
}

Tensor sum(const Tensor& x) { return sum(x, all_axes(x), false); }
Tensor mean(const Tensor& x) { return mean(x, all_axes(x), false); }

Tensor var(const Tensor& x, std::vector<std::int64_t> axes, bool keepdim) {
  const auto r = plan_reduction(x.shape(), std::move(axes), keepdim, "var");
  auto mu = std::make_shared<std::vector<Real>>(reduce_sum(x, r));
  const Real inv = Real(1) / static_cast<Real>(r.count);
  for (auto& v : *mu) v *= inv;
  std::vector<Real> out(mu->size(), Real(0));
  const Real* px = x.ptr();
  const auto sx = contiguous_strides(x.shape());
  const auto so = broadcast_strides(r.kept, x.shape());
  for_each_broadcast(x.shape(), sx, so, [&](std::int64_t, std::int64_t ix, std::int64_t io) {
    const Real d = px[ix] - (*mu)[static_cast<std::size_t>(io)];
    out[static_cast<std::size_t>(io)] += d * d;
  });
  for (auto& v : out) v *= inv;
  return finish("var", r.out, std::move(out), {&x},
                [x, r, mu, inv](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  const Real* px = x.ptr();
                  Real* gx = gin[0]->data();
                  const auto sx = contiguous_strides(x.shape());
                  const auto so = broadcast_strides(r.kept, x.shape());
                  for_each_broadcast(x.shape(), sx, so,
                                     [&](std::int64_t, std::int64_t ix, std::int64_t io) {
                                       const auto o = static_cast<std::size_t>(io);
                                       gx[ix] += g[o] * Real(2) * inv * (px[ix] - (*mu)[o]);
                                     });
                });
}

Tensor max_detached(const Tensor& x, std::int64_t axis) {
  axis = detail::normalize_axis(axis, x.rank(), "max");
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = 1;
  std::vector<Real> out(static_cast<std::size_t>(s.outer * s.inner),
                        -std::numeric_limits<Real>::infinity());
  const Real* px = x.ptr();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t i = 0; i < s.n; ++i)
      for (std::int64_t j = 0; j < s.inner; ++j) {
        auto& m = out[static_cast<std::size_t>(o * s.inner + j)];
        m = std::max(m, px[(o * s.n + i) * s.inner + j]);
      }
  return Tensor::from(std::move(out_shape), std::move(out));
}

Tensor softmax(const Tensor& x, std::int64_t axis) {
  axis = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto s = split_at(x.shape(), axis);
  auto out = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(x.numel()));
  const Real* px = x.ptr();
  auto& y = *out;
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t j = 0; j < s.inner; ++j) {
      const auto base = o * s.n * s.inner + j;
      Real m = -std::numeric_limits<Real>::infinity();
      for (std::int64_t i = 0; i < s.n; ++i) m = std::max(m, px[base + i * s.inner]);
      Real total = 0;
      for (std::int64_t i = 0; i < s.n; ++i) {
        const auto k = static_cast<std::size_t>(base + i * s.inner);
        y[k] = std::exp(px[k] - m);
        total += y[k];
      }
      for (std::int64_t i = 0; i < s.n; ++i) y[static_cast<std::size_t>(base + i * s.inner)] /= total;
    }
  }
  return detail::finish_shared(
      "softmax", x.shape(), out, {&x},
      [s, y = out](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
        Real* gx = gin[0]->data();
        const auto& yv = *y;
        for (std::int64_t o = 0; o < s.outer; ++o) {
          for (std::int64_t j = 0; j < s.inner; ++j) {
            const auto base = o * s.n * s.inner + j;
            Real dot = 0;
            for (std::int64_t i = 0; i < s.n; ++i) {
              const auto k = static_cast<std::size_t>(base + i * s.inner);
              dot += g[k] * yv[k];
            }
            for (std::int64_t i = 0; i < s.n; ++i) {
              const auto k = static_cast<std::size_t>(base + i * s.inner);
              gx[k] += yv[k] * (g[k] - dot);
            }
          }
        }
      });
}

Tensor logsumexp(const Tensor& x, std::int64_t axis) {
  const Tensor m = max_detached(x, axis);
  return add(log(sum(exp(sub(x, m)), {axis}, true)), m);
}

}  // namespace boxformer
