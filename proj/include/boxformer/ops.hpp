#pragma once

#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "boxformer/tensor.hpp"

namespace boxformer {

// Elementwise binary ops broadcast with numpy rules.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, Real factor);
Tensor shift(const Tensor& x, Real offset);

/// Fingerprint of the branch taken by every element of the piecewise
/// primitives (relu, leaky_relu, abs) evaluated on this thread while the
/// monitor is alive. Gradient checks use it to keep finite differences
/// within one smooth piece.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  void reset() { hash_ = kSeed; }
  std::uint64_t fingerprint() const { return hash_; }

 private:
  friend void note_kinks(const Tensor& x);
  static constexpr std::uint64_t kSeed = 1469598103934665603ull;
  std::uint64_t hash_ = kSeed;
  KinkMonitor* previous_;
};

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, Real slope);
/// tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3))).
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);

/// Full reductions return shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::vector<std::int64_t> axes, bool keepdim);
Tensor mean(const Tensor& x, std::vector<std::int64_t> axes, bool keepdim);
/// Population variance (divides by the reduced count).
Tensor var(const Tensor& x, std::vector<std::int64_t> axes, bool keepdim);
/// Maximum along `axis` with keepdim, returned untracked. Used as a
/// stabilising shift whose gradient contribution cancels exactly.
Tensor max_detached(const Tensor& x, std::int64_t axis);

Tensor softmax(const Tensor& x, std::int64_t axis);
/// log(sum(exp(x))) along `axis`, keepdim, stabilised by the row maximum.
Tensor logsumexp(const Tensor& x, std::int64_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::vector<std::int64_t> order);
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
Tensor slice(const Tensor& x, std::int64_t axis, std::int64_t start, std::int64_t length);
Tensor index_select(const Tensor& x, std::int64_t axis, std::vector<std::int64_t> indices);

/// [..., M, K] x [..., K, N]. The right operand may omit the batch dims.
Tensor matmul(const Tensor& a, const Tensor& b);

enum class PadMode { kZeros, kReflect };

struct Conv2dOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  PadMode pad_mode = PadMode::kZeros;
};

struct ConvTranspose2dOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t output_padding = 0;
};

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                           std::int64_t padding);
std::int64_t conv_transpose_out_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                     std::int64_t padding, std::int64_t output_padding);

/// x [B,C,H,W], weight [O,C,kh,kw], optional bias [O].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt);
/// x [B,C,H,W], weight [C,O,kh,kw], optional bias [O]. Exact adjoint of
/// conv2d with the same geometry.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        const ConvTranspose2dOptions& opt);
Tensor avg_pool2x2(const Tensor& x);
Tensor upsample_nearest2x(const Tensor& x);

struct Point2 {
  double x = 0;
  double y = 0;
};

/// Samples map [C,H,W] at continuous points (pixel i has its center at
/// i + 0.5); points outside clamp to the border. Returns [P, C].
Tensor bilinear_sample(const Tensor& map, std::span<const Point2> points);

// Generic dispatch used by the primitive catalogue and the grad-check tool.

enum class OpKind {
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatmul,
  kConv2d,
  kConvTranspose2d,
  kAvgPool2x2,
  kUpsampleNearest2x,
  kRelu,
  kLeakyRelu,
  kGelu,
  kTanh,
  kSigmoid,
  kSoftplus,
  kExp,
  kLog,
  kAbs,
  kSoftmax,
  kSum,
  kMean,
  kVar,
  kSqrt,
  kConcat,
  kSlice,
  kReshape,
  kPermute,
  kIndexSelect,
  kBilinearSample,
};

class UnknownOpError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using AttrValue = std::variant<std::int64_t, double, std::string, std::vector<std::int64_t>,
                               std::vector<double>>;
using Attrs = std::map<std::string, AttrValue>;

OpKind op_kind_from_string(const std::string& name);
std::string to_string(OpKind kind);
std::vector<OpKind> all_op_kinds();

/// Runs one primitive by kind. Attribute names: stride, padding,
/// output_padding, pad_mode ("zeros"|"reflect"), axis, axes, start, length,
/// shape, order, indices, slope, points (flat x,y list).
Tensor primitive_forward(OpKind kind, const std::vector<Tensor>& inputs, const Attrs& attrs = {});

}  // namespace boxformer
