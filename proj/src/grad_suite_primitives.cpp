#include <algorithm>
#include <map>

#include "boxformer/grad_check.hpp"
#include "boxformer/grad_suite.hpp"
#include "boxformer/ops.hpp"
#include "boxformer/random.hpp"

namespace boxformer {

namespace {

struct Case {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> differentiable;
  Attrs attrs;
};

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

Shape random_shape(Rng& rng, std::int64_t min_rank = 1, std::int64_t max_rank = 4) {
  const auto rank = pick(rng, min_rank, max_rank);
  static const std::int64_t caps[4] = {2, 4, 8, 8};
  Shape s;
  for (std::int64_t d = 4 - rank; d < 4; ++d) s.push_back(pick(rng, 1, caps[d]));
  return s;
}

Tensor away_from_zero(Shape shape, Rng& rng, double margin) {
  auto t = rand_uniform(std::move(shape), rng, margin, 1.0 + margin);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.mutable_data())
    if (flip(rng)) v = -v;
  return t;
}

// Shape that broadcasts against `s`: random dims collapsed to 1 and possibly
// leading dims dropped.
Shape broadcast_partner(const Shape& s, Rng& rng) {
  Shape out = s;
  for (auto& d : out)
    if (pick(rng, 0, 2) == 0) d = 1;
  const auto drop = pick(rng, 0, static_cast<std::int64_t>(out.size()) - 1);
  out.erase(out.begin(), out.begin() + drop);
  return out;
}

Case make_case(OpKind kind, Rng& rng) {
  Case c;
  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const auto s = random_shape(rng);
      c.inputs = {randn(s, rng), randn(pick(rng, 0, 1) ? s : broadcast_partner(s, rng), rng)};
      if (pick(rng, 0, 1)) std::swap(c.inputs[0], c.inputs[1]);
      c.differentiable = {0, 1};
      break;
    }
    case OpKind::kDiv: {
      const auto s = random_shape(rng);
      const auto t = pick(rng, 0, 1) ? s : broadcast_partner(s, rng);
      c.inputs = {randn(s, rng), away_from_zero(t, rng, 0.5)};
      c.differentiable = {0, 1};
      break;
    }
    case OpKind::kMatmul: {
      const auto m = pick(rng, 1, 6), k = pick(rng, 1, 6), n = pick(rng, 1, 6);
      const auto batch = pick(rng, 0, 2);
      Shape sa = {m, k};
      Shape sb = {k, n};
      if (batch) {
        sa.insert(sa.begin(), batch);
        if (pick(rng, 0, 1)) sb.insert(sb.begin(), batch);
      }
      c.inputs = {randn(sa, rng), randn(sb, rng)};
      c.differentiable = {0, 1};
      break;
    }
    case OpKind::kConv2d: {
      const auto b = pick(rng, 1, 2), ch = pick(rng, 1, 4), h = pick(rng, 4, 8), w = pick(rng, 4, 8);
      const auto o = pick(rng, 1, 4), k = pick(rng, 1, 4);
      const auto stride = pick(rng, 1, 2);
      const auto pad = pick(rng, 0, std::min<std::int64_t>(k - 1, 2));
      const bool reflect = pad > 0 && pick(rng, 0, 1);
      c.inputs = {randn({b, ch, h, w}, rng), randn({o, ch, k, k}, rng, 0.5), randn({o}, rng)};
      c.attrs = {{"stride", stride}, {"padding", pad}, {"pad_mode", std::string(reflect ? "reflect" : "zeros")}};
      c.differentiable = {0, 1, 2};
      break;
    }
    case OpKind::kConvTranspose2d: {
      const auto b = pick(rng, 1, 2), ch = pick(rng, 1, 4), h = pick(rng, 2, 6), w = pick(rng, 2, 6);
      const auto o = pick(rng, 1, 4), k = pick(rng, 2, 4);
      const auto stride = pick(rng, 1, 2);
      const auto pad = pick(rng, 0, 1);
      const auto outpad = stride > 1 ? pick(rng, 0, 1) : 0;
      c.inputs = {randn({b, ch, h, w}, rng), randn({ch, o, k, k}, rng, 0.5), randn({o}, rng)};
      c.attrs = {{"stride", stride}, {"padding", pad}, {"output_padding", outpad}};
      c.differentiable = {0, 1, 2};
      break;
    }
    case OpKind::kAvgPool2x2:
      c.inputs = {randn({pick(rng, 1, 2), pick(rng, 1, 4), 2 * pick(rng, 1, 4), 2 * pick(rng, 1, 4)}, rng)};
      c.differentiable = {0};
      break;
    case OpKind::kUpsampleNearest2x:
      c.inputs = {randn({pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)}, rng)};
      c.differentiable = {0};
      break;
    case OpKind::kRelu:
    case OpKind::kAbs:
      c.inputs = {away_from_zero(random_shape(rng), rng, 0.05)};
      c.differentiable = {0};
      break;
    case OpKind::kLeakyRelu:
      c.inputs = {away_from_zero(random_shape(rng), rng, 0.05)};
      c.attrs = {{"slope", 0.2}};
      c.differentiable = {0};
      break;
    case OpKind::kGelu:
    case OpKind::kTanh:
    case OpKind::kSigmoid:
    case OpKind::kSoftplus:
    case OpKind::kExp:
      c.inputs = {randn(random_shape(rng), rng)};
      c.differentiable = {0};
      break;
    case OpKind::kLog:
    case OpKind::kSqrt:
      c.inputs = {rand_uniform(random_shape(rng), rng, 0.5, 2.0)};
      c.differentiable = {0};
      break;
    case OpKind::kSoftmax: {
      const auto s = random_shape(rng);
      c.inputs = {randn(s, rng, 2.0)};
      c.attrs = {{"axis", pick(rng, 0, static_cast<std::int64_t>(s.size()) - 1)}};
      c.differentiable = {0};
      break;
    }
    case OpKind::kSum:
    case OpKind::kMean:
    case OpKind::kVar: {
      const auto s = random_shape(rng);
      std::vector<std::int64_t> axes;
      for (std::int64_t d = 0; d < static_cast<std::int64_t>(s.size()); ++d)
        if (pick(rng, 0, 1)) axes.push_back(d);
      if (axes.empty()) axes.push_back(0);
      c.inputs = {randn(s, rng)};
      c.attrs = {{"axes", axes}, {"keepdim", pick(rng, 0, 1)}};
      c.differentiable = {0};
      break;
    }
    case OpKind::kConcat: {
      auto s = random_shape(rng);
      const auto axis = pick(rng, 0, static_cast<std::int64_t>(s.size()) - 1);
      const auto parts = pick(rng, 2, 3);
      for (std::int64_t i = 0; i < parts; ++i) {
        s[static_cast<std::size_t>(axis)] = pick(rng, 1, 3);
        c.inputs.push_back(randn(s, rng));
        c.differentiable.push_back(static_cast<std::size_t>(i));
      }
      c.attrs = {{"axis", axis}};
      break;
    }
    case OpKind::kSlice: {
      const auto s = random_shape(rng);
      const auto axis = pick(rng, 0, static_cast<std::int64_t>(s.size()) - 1);
      const auto n = s[static_cast<std::size_t>(axis)];
      const auto start = pick(rng, 0, n - 1);
      c.inputs = {randn(s, rng)};
      c.attrs = {{"axis", axis}, {"start", start}, {"length", pick(rng, 1, n - start)}};
      c.differentiable = {0};
      break;
    }
    case OpKind::kReshape: {
      const auto s = random_shape(rng);
      c.inputs = {randn(s, rng)};
      c.attrs = {{"shape", std::vector<std::int64_t>{numel(s), 1}}};
      c.differentiable = {0};
      break;
    }
    case OpKind::kPermute: {
      const auto s = random_shape(rng, 2, 4);
      std::vector<std::int64_t> order(s.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
      std::shuffle(order.begin(), order.end(), rng);
      c.inputs = {randn(s, rng)};
      c.attrs = {{"order", order}};
      c.differentiable = {0};
      break;
    }
    case OpKind::kIndexSelect: {
      const auto s = random_shape(rng);
      const auto axis = pick(rng, 0, static_cast<std::int64_t>(s.size()) - 1);
      std::vector<std::int64_t> idx;
      for (std::int64_t i = 0, m = pick(rng, 1, 6); i < m; ++i)
        idx.push_back(pick(rng, 0, s[static_cast<std::size_t>(axis)] - 1));
      c.inputs = {randn(s, rng)};
      c.attrs = {{"axis", axis}, {"indices", idx}};
      c.differentiable = {0};
      break;
    }
    case OpKind::kBilinearSample: {
      const auto ch = pick(rng, 1, 4), h = pick(rng, 1, 8), w = pick(rng, 1, 8);
      std::vector<double> pts;
      std::uniform_real_distribution<double> ux(-1.0, static_cast<double>(w) + 1.0);
      std::uniform_real_distribution<double> uy(-1.0, static_cast<double>(h) + 1.0);
      for (std::int64_t i = 0, n = pick(rng, 1, 12); i < n; ++i) {
        pts.push_back(ux(rng));
        pts.push_back(uy(rng));
      }
      c.inputs = {randn({ch, h, w}, rng)};
      c.attrs = {{"points", pts}};
      c.differentiable = {0};
      break;
    }
  }
  return c;
}

}  // namespace

std::vector<GradCheckEntry> primitive_grad_suite(std::uint64_t seed, int trials) {
  Rng rng = derive_rng(seed, {0x6772616443ull});
  const auto kinds = all_op_kinds();
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  for (int t = 0; t < trials; ++t) {
    const OpKind kind = kinds[static_cast<std::size_t>(t) % kinds.size()];
    Case c = make_case(kind, rng);
    Tensor out;
    {
      NoGradScope no_grad;
      out = primitive_forward(kind, c.inputs, c.attrs);
    }
    const Tensor weights = randn(out.shape(), rng);
    for (std::size_t which : c.differentiable) {
      auto fn = [&](const Tensor& x) {
        auto inputs = c.inputs;
        inputs[which] = x;
        return sum(mul(primitive_forward(kind, inputs, c.attrs), weights));
      };
      const double err = grad_check(fn, c.inputs[which], kGradCheckEps);
      const std::string name = to_string(kind) + (c.differentiable.size() > 1 ? "/input" + std::to_string(which) : "");
      if (!worst.count(name)) order.push_back(name);
      worst[name] = std::max(worst[name], err);
    }
  }
  std::vector<GradCheckEntry> entries;
  for (const auto& name : order) {
    entries.push_back({name, worst[name], worst[name] < kGradCheckTolerance});
  }
  return entries;
}

}  // namespace boxformer
