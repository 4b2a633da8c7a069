#pragma once

#include <string>
#include <vector>

#include "boxformer/ops.hpp"
#include "boxformer/random.hpp"

namespace boxformer {

/// A trainable tensor addressed by a stable dotted path, e.g.
/// `content_encoder.conv1.weight`.
struct NamedParam {
  std::string name;
  Tensor* tensor = nullptr;
};
using ParamList = std::vector<NamedParam>;

constexpr double kInitStd = 0.02;

Tensor make_param(Shape shape, Rng& rng, double stddev = kInitStd);
Tensor make_param_filled(Shape shape, Real value);

std::string join_name(const std::string& prefix, const std::string& name);

struct Conv2d {
  Tensor weight;
  Tensor bias;
  Conv2dOptions options;

  Conv2d() = default;
  Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, Conv2dOptions opt, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out);
};

struct ConvTranspose2d {
  Tensor weight;
  Tensor bias;
  ConvTranspose2dOptions options;

  ConvTranspose2d() = default;
  ConvTranspose2d(std::int64_t in, std::int64_t out, std::int64_t kernel, ConvTranspose2dOptions opt,
                  Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out);
};

/// y = x W + b over the last axis; W is [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng);
  static Linear zeros(std::int64_t in, std::int64_t out);

  std::int64_t in_features() const { return weight.dim(0); }
  std::int64_t out_features() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out);
};

constexpr double kNormEps = 1e-5;

/// (x - mean) / sqrt(var + eps) over spatial axes of [B, C, H, W].
Tensor instance_normalize(const Tensor& x, double eps = kNormEps);

struct InstanceNorm2d {
  Tensor weight;
  Tensor bias;

  InstanceNorm2d() = default;
  explicit InstanceNorm2d(std::int64_t channels);

  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out);
};

}  // namespace boxformer
