#include "boxformer/nn.hpp"

namespace boxformer {

Tensor make_param(Shape shape, Rng& rng, double stddev) {
  auto t = randn(std::move(shape), rng, stddev);
  t.set_requires_grad(true);
  return t;
}

Tensor make_param_filled(Shape shape, Real value) {
  auto t = Tensor::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

Conv2d::Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, Conv2dOptions opt, Rng& rng)
    : weight(make_param({out, in, kernel, kernel}, rng)),
      bias(make_param_filled({out}, 0)),
      options(opt) {}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, options); }

void Conv2d::collect(const std::string& prefix, ParamList& out) {
  out.push_back({join_name(prefix, "weight"), &weight});
  out.push_back({join_name(prefix, "bias"), &bias});
}

ConvTranspose2d::ConvTranspose2d(std::int64_t in, std::int64_t out, std::int64_t kernel,
                                 ConvTranspose2dOptions opt, Rng& rng)
    : weight(make_param({in, out, kernel, kernel}, rng)),
      bias(make_param_filled({out}, 0)),
      options(opt) {}

Tensor ConvTranspose2d::operator()(const Tensor& x) const {
  return conv_transpose2d(x, weight, bias, options);
}

void ConvTranspose2d::collect(const std::string& prefix, ParamList& out) {
  out.push_back({join_name(prefix, "weight"), &weight});
  out.push_back({join_name(prefix, "bias"), &bias});
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng)
    : weight(make_param({in, out}, rng)), bias(make_param_filled({out}, 0)) {}

Linear Linear::zeros(std::int64_t in, std::int64_t out) {
  Linear l;
  l.weight = make_param_filled({in, out}, 0);
  l.bias = make_param_filled({out}, 0);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, ParamList& out) {
  out.push_back({join_name(prefix, "weight"), &weight});
  out.push_back({join_name(prefix, "bias"), &bias});
}

Tensor instance_normalize(const Tensor& x, double eps) {
  if (x.rank() != 4) throw ShapeError("instance_norm: expected [B,C,H,W], got " + to_string(x.shape()));
  const auto mu = mean(x, {2, 3}, true);
  const auto centered = sub(x, mu);
  const auto v = mean(mul(centered, centered), {2, 3}, true);
  return div(centered, sqrt(shift(v, static_cast<Real>(eps))));
}

InstanceNorm2d::InstanceNorm2d(std::int64_t channels)
    : weight(make_param_filled({channels}, 1)), bias(make_param_filled({channels}, 0)) {}

Tensor InstanceNorm2d::operator()(const Tensor& x) const {
  const auto c = weight.dim(0);
  if (x.rank() != 4 || x.dim(1) != c) {
    throw ShapeError("instance_norm: expected channels " + std::to_string(c) + ", got " + to_string(x.shape()));
  }
  const auto n = instance_normalize(x);
  return add(mul(n, reshape(weight, {1, c, 1, 1})), reshape(bias, {1, c, 1, 1}));
}

void InstanceNorm2d::collect(const std::string& prefix, ParamList& out) {
  out.push_back({join_name(prefix, "weight"), &weight});
  out.push_back({join_name(prefix, "bias"), &bias});
}

}  // namespace boxformer
