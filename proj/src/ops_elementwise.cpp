#include <cmath>
#include <numbers>

#include "boxformer/ops.hpp"
#include "ops_internal.hpp"

namespace boxformer {

namespace detail {

void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

std::vector<std::int64_t> contiguous_strides(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (std::int64_t d = static_cast<std::int64_t>(shape.size()) - 2; d >= 0; --d) {
    const auto du = static_cast<std::size_t>(d);
    strides[du] = strides[du + 1] * shape[du + 1];
  }
  return strides;
}

std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const auto base = contiguous_strides(in);
  std::vector<std::int64_t> strides(out.size(), 0);
  const auto offset = out.size() - in.size();
  for (std::size_t d = 0; d < in.size(); ++d) {
    strides[offset + d] = in[d] == 1 ? 0 : base[d];
  }
  return strides;
}

Shape broadcast_shapes(std::string_view op, const Shape& a, const Shape& b) {
  const auto rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_mismatch(op, a, b);
    out[i] = da == 1 ? db : da;
  }
  return out;
}

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank, std::string_view op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  }
  return axis;
}

}  // namespace detail

namespace {

using detail::broadcast_strides;
using detail::finish;
using detail::for_each_broadcast;

// Forward f(x, y); partials da(g, x, y, out), db(g, x, y, out).
template <class F, class DA, class DB>
Tensor binary(std::string_view op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const Shape out_shape = detail::broadcast_shapes(op, a.shape(), b.shape());
  std::vector<Real> out(static_cast<std::size_t>(numel(out_shape)));
  const Real* pa = a.ptr();
  const Real* pb = b.ptr();
  const bool same = a.shape() == b.shape();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i], pb[i]);
  } else {
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    for_each_broadcast(out_shape, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      out[static_cast<std::size_t>(i)] = f(pa[ia], pb[ib]);
    });
  }
  auto shape_copy = out_shape;
  return finish(op, std::move(shape_copy), std::move(out), {&a, &b},
                [a, b, out_shape, same, da, db](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
                  const Real* pa = a.ptr();
                  const Real* pb = b.ptr();
                  Real* ga = gin[0] ? gin[0]->data() : nullptr;
                  Real* gb = gin[1] ? gin[1]->data() : nullptr;
                  if (same) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (ga) ga[i] += da(g[i], pa[i], pb[i]);
                      if (gb) gb[i] += db(g[i], pa[i], pb[i]);
                    }
                    return;
                  }
                  const auto sa = broadcast_strides(a.shape(), out_shape);
                  const auto sb = broadcast_strides(b.shape(), out_shape);
                  for_each_broadcast(out_shape, sa, sb,
                                     [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
                                       const Real gi = g[static_cast<std::size_t>(i)];
                                       if (ga) ga[ia] += da(gi, pa[ia], pb[ib]);
                                       if (gb) gb[ib] += db(gi, pa[ia], pb[ib]);
                                     });
                });
}

// Forward f(x); derivative df(x, y) with y = f(x).
template <class F, class DF>
Tensor unary(std::string_view op, const Tensor& x, F f, DF df) {
  const Real* px = x.ptr();
  auto out = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(x.numel()));
  for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = f(px[i]);
  return detail::finish_shared(
      op, x.shape(), out, {&x}, [x, y = out, df](std::span<const Real> g, std::span<std::vector<Real>*> gin) {
        const Real* px = x.ptr();
        Real* gx = gin[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(px[i], (*y)[i]);
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](Real x, Real y) { return x + y; }, [](Real g, Real, Real) { return g; },
      [](Real g, Real, Real) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real g, Real, Real) { return g; },
      [](Real g, Real, Real) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real g, Real, Real y) { return g * y; },
      [](Real g, Real x, Real) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](Real x, Real y) { return x / y; }, [](Real g, Real, Real y) { return g / y; },
      [](Real g, Real x, Real y) { return -g * x / (y * y); });
}

Tensor scale(const Tensor& x, Real factor) {
  return unary(
      "scale", x, [factor](Real v) { return v * factor; }, [factor](Real, Real) { return factor; });
}

Tensor shift(const Tensor& x, Real offset) {
  return unary(
      "shift", x, [offset](Real v) { return v + offset; }, [](Real, Real) { return Real(1); });
}

namespace {
thread_local KinkMonitor* t_kink_monitor = nullptr;
}  // namespace

KinkMonitor::KinkMonitor() : previous_(t_kink_monitor) { t_kink_monitor = this; }
KinkMonitor::~KinkMonitor() { t_kink_monitor = previous_; }

void note_kinks(const Tensor& x) {
  auto* m = t_kink_monitor;
  if (!m) return;
  for (Real v : x.data()) {
    m->hash_ = (m->hash_ ^ (v > 0 ? 1u : v < 0 ? 2u : 3u)) * 1099511628211ull;
  }
}

Tensor relu(const Tensor& x) {
  note_kinks(x);
  return unary(
      "relu", x, [](Real v) { return v > 0 ? v : Real(0); },
      [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

Tensor leaky_relu(const Tensor& x, Real slope) {
  note_kinks(x);
  return unary(
      "leaky_relu", x, [slope](Real v) { return v > 0 ? v : slope * v; },
      [slope](Real v, Real) { return v > 0 ? Real(1) : slope; });
}

Tensor gelu(const Tensor& x) {
  constexpr Real c = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real k = Real(0.044715);
  return unary(
      "gelu", x,
      [](Real v) { return Real(0.5) * v * (Real(1) + std::tanh(c * (v + k * v * v * v))); },
      [](Real v, Real) {
        const Real t = std::tanh(c * (v + k * v * v * v));
        const Real dt = (Real(1) - t * t) * c * (Real(1) + Real(3) * k * v * v);
        return Real(0.5) * (Real(1) + t) + Real(0.5) * v * dt;
      });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return Real(1) - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](Real v) {
        if (v >= 0) return Real(1) / (Real(1) + std::exp(-v));
        const Real e = std::exp(v);
        return e / (Real(1) + e);
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      [](Real v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](Real v, Real) {
        if (v >= 0) return Real(1) / (Real(1) + std::exp(-v));
        const Real e = std::exp(v);
        return e / (Real(1) + e);
      });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](Real v) { return std::sqrt(v); },
      [](Real, Real y) { return Real(0.5) / y; });
}

Tensor abs(const Tensor& x) {
  note_kinks(x);
  return unary(
      "abs", x, [](Real v) { return std::abs(v); },
      [](Real v, Real) { return v > 0 ? Real(1) : (v < 0 ? Real(-1) : Real(0)); });
}

}  // namespace boxformer
