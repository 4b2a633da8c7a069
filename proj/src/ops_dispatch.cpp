#include <array>
#include <utility>

#include "boxformer/ops.hpp"

namespace boxformer {

namespace {

constexpr std::array<std::pair<OpKind, const char*>, 29> kNames{{
    {OpKind::kAdd, "add"},
    {OpKind::kSub, "sub"},
    {OpKind::kMul, "mul"},
    {OpKind::kDiv, "div"},
    {OpKind::kMatmul, "matmul"},
    {OpKind::kConv2d, "conv2d"},
    {OpKind::kConvTranspose2d, "conv_transpose2d"},
    {OpKind::kAvgPool2x2, "avg_pool2x2"},
    {OpKind::kUpsampleNearest2x, "upsample_nearest2x"},
    {OpKind::kRelu, "relu"},
    {OpKind::kLeakyRelu, "leaky_relu"},
    {OpKind::kGelu, "gelu"},
    {OpKind::kTanh, "tanh"},
    {OpKind::kSigmoid, "sigmoid"},
    {OpKind::kSoftplus, "softplus"},
    {OpKind::kExp, "exp"},
    {OpKind::kLog, "log"},
    {OpKind::kAbs, "abs"},
    {OpKind::kSoftmax, "softmax"},
    {OpKind::kSum, "sum"},
    {OpKind::kMean, "mean"},
    {OpKind::kVar, "var"},
    {OpKind::kSqrt, "sqrt"},
    {OpKind::kConcat, "concat"},
    {OpKind::kSlice, "slice"},
    {OpKind::kReshape, "reshape"},
    {OpKind::kPermute, "permute"},
    {OpKind::kIndexSelect, "index_select"},
    {OpKind::kBilinearSample, "bilinear_sample"},
}};

template <class T>
T attr(const Attrs& attrs, const std::string& key, T fallback) {
  auto it = attrs.find(key);
  if (it == attrs.end()) return fallback;
  if (const T* v = std::get_if<T>(&it->second)) return *v;
  throw std::invalid_argument("attribute '" + key + "' has the wrong type");
}

template <class T>
T required(const Attrs& attrs, const std::string& key) {
  if (!attrs.count(key)) throw std::invalid_argument("missing attribute '" + key + "'");
  return attr<T>(attrs, key, T{});
}

void expect_inputs(OpKind kind, const std::vector<Tensor>& inputs, std::size_t lo, std::size_t hi) {
  if (inputs.size() < lo || inputs.size() > hi) {
    throw std::invalid_argument(to_string(kind) + ": wrong number of inputs (" +
                                std::to_string(inputs.size()) + ")");
  }
}

}  // namespace

OpKind op_kind_from_string(const std::string& name) {
  for (const auto& [kind, n] : kNames) {
    if (name == n) return kind;
  }
  throw UnknownOpError("unknown op '" + name + "'");
}

std::string to_string(OpKind kind) {
  for (const auto& [k, n] : kNames) {
    if (k == kind) return n;
  }
  throw UnknownOpError("unknown op kind " + std::to_string(static_cast<int>(kind)));
}

std::vector<OpKind> all_op_kinds() {
  std::vector<OpKind> kinds;
  for (const auto& entry : kNames) kinds.push_back(entry.first);
  return kinds;
}

Tensor primitive_forward(OpKind kind, const std::vector<Tensor>& in, const Attrs& attrs) {
  const auto unary_input = [&] { expect_inputs(kind, in, 1, 1); return in[0]; };
  const auto binary_inputs = [&] { expect_inputs(kind, in, 2, 2); };
  switch (kind) {
    case OpKind::kAdd: binary_inputs(); return add(in[0], in[1]);
    case OpKind::kSub: binary_inputs(); return sub(in[0], in[1]);
    case OpKind::kMul: binary_inputs(); return mul(in[0], in[1]);
    case OpKind::kDiv: binary_inputs(); return div(in[0], in[1]);
    case OpKind::kMatmul: binary_inputs(); return matmul(in[0], in[1]);
    case OpKind::kConv2d: {
      expect_inputs(kind, in, 2, 3);
      Conv2dOptions opt;
      opt.stride = attr<std::int64_t>(attrs, "stride", 1);
      opt.padding = attr<std::int64_t>(attrs, "padding", 0);
      const auto mode = attr<std::string>(attrs, "pad_mode", "zeros");
      if (mode != "zeros" && mode != "reflect") throw std::invalid_argument("unknown pad_mode " + mode);
      opt.pad_mode = mode == "reflect" ? PadMode::kReflect : PadMode::kZeros;
      return conv2d(in[0], in[1], in.size() > 2 ? in[2] : Tensor{}, opt);
    }
    case OpKind::kConvTranspose2d: {
      expect_inputs(kind, in, 2, 3);
      ConvTranspose2dOptions opt;
      opt.stride = attr<std::int64_t>(attrs, "stride", 1);
      opt.padding = attr<std::int64_t>(attrs, "padding", 0);
      opt.output_padding = attr<std::int64_t>(attrs, "output_padding", 0);
      return conv_transpose2d(in[0], in[1], in.size() > 2 ? in[2] : Tensor{}, opt);
    }
    case OpKind::kAvgPool2x2: return avg_pool2x2(unary_input());
    case OpKind::kUpsampleNearest2x: return upsample_nearest2x(unary_input());
    case OpKind::kRelu: return relu(unary_input());
    case OpKind::kLeakyRelu: return leaky_relu(unary_input(), static_cast<Real>(attr<double>(attrs, "slope", 0.2)));
    case OpKind::kGelu: return gelu(unary_input());
    case OpKind::kTanh: return tanh(unary_input());
    case OpKind::kSigmoid: return sigmoid(unary_input());
    case OpKind::kSoftplus: return softplus(unary_input());
    case OpKind::kExp: return exp(unary_input());
    case OpKind::kLog: return log(unary_input());
    case OpKind::kAbs: return abs(unary_input());
    case OpKind::kSqrt: return sqrt(unary_input());
    case OpKind::kSoftmax: return softmax(unary_input(), attr<std::int64_t>(attrs, "axis", -1));
    case OpKind::kSum:
    case OpKind::kMean:
    case OpKind::kVar: {
      const Tensor x = unary_input();
      if (!attrs.count("axes")) {
        if (kind == OpKind::kSum) return sum(x);
        if (kind == OpKind::kMean) return mean(x);
        std::vector<std::int64_t> all(static_cast<std::size_t>(x.rank()));
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
        return var(x, all, false);
      }
      const auto axes = required<std::vector<std::int64_t>>(attrs, "axes");
      const bool keep = attr<std::int64_t>(attrs, "keepdim", 1) != 0;
      if (kind == OpKind::kSum) return sum(x, axes, keep);
      if (kind == OpKind::kMean) return mean(x, axes, keep);
      return var(x, axes, keep);
    }
    case OpKind::kConcat:
      if (in.empty()) throw std::invalid_argument("concat: no inputs");
      return concat(in, attr<std::int64_t>(attrs, "axis", 0));
    case OpKind::kSlice:
      return slice(unary_input(), attr<std::int64_t>(attrs, "axis", 0), required<std::int64_t>(attrs, "start"),
                   required<std::int64_t>(attrs, "length"));
    case OpKind::kReshape: return reshape(unary_input(), required<std::vector<std::int64_t>>(attrs, "shape"));
    case OpKind::kPermute: return permute(unary_input(), required<std::vector<std::int64_t>>(attrs, "order"));
    case OpKind::kIndexSelect:
      return index_select(unary_input(), attr<std::int64_t>(attrs, "axis", 0),
                          required<std::vector<std::int64_t>>(attrs, "indices"));
    case OpKind::kBilinearSample: {
      const auto flat = required<std::vector<double>>(attrs, "points");
      if (flat.size() % 2) throw std::invalid_argument("points must hold x,y pairs");
      std::vector<Point2> pts;
      for (std::size_t i = 0; i + 1 < flat.size(); i += 2) pts.push_back({flat[i], flat[i + 1]});
      return bilinear_sample(unary_input(), pts);
    }
  }
  throw UnknownOpError("unknown op kind " + std::to_string(static_cast<int>(kind)));
}

}  // namespace boxformer
