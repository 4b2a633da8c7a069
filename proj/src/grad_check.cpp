#include "boxformer/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "boxformer/ops.hpp"

namespace boxformer {

GradCheckResult grad_check_detailed(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double eps,
                                    double scale_floor) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");

  Tensor leaf = x.clone();
  leaf.set_requires_grad(true);
  std::vector<Real> analytic(static_cast<std::size_t>(leaf.numel()), Real(0));
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor out = fn(leaf);
    if (out.numel() != 1) {
      throw AutogradError("grad_check: function returned shape " + to_string(out.shape()));
    }
    if (out.requires_grad()) {
      const auto grads = backward(out);
      if (grads.has(leaf)) {
        const auto g = grads.of(leaf).data();
        std::copy(g.begin(), g.end(), analytic.begin());
      }
    }
  }

  double largest = 0;
  for (Real a : analytic) largest = std::max(largest, std::abs(static_cast<double>(a)));
  const double floor = std::max(1e-8, scale_floor * largest);

  NoGradScope no_grad;
  KinkMonitor monitor;
  Tensor probe = x.clone();
  auto values = probe.mutable_data();
  auto eval = [&](std::uint64_t* pattern) {
    monitor.reset();
    const double f = fn(probe).item();
    *pattern = monitor.fingerprint();
    return f;
  };
  std::uint64_t base_pattern = 0;
  eval(&base_pattern);

  GradCheckResult result;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real original = values[i];
    double numeric = 0;
    // Fourth-order central stencil. The step shrinks until every probe
    // takes the same branches of relu/abs as the base point.
    double h = eps;
    for (int attempt = 0; attempt < kMaxStepReductions; ++attempt, h *= 0.25) {
      double f[4];
      bool smooth = true;
      const double offsets[4] = {h, -h, 2 * h, -2 * h};
      for (int k = 0; k < 4; ++k) {
        values[i] = static_cast<Real>(original + offsets[k]);
        std::uint64_t pattern = 0;
        f[k] = eval(&pattern);
        smooth = smooth && pattern == base_pattern;
      }
      values[i] = original;
      numeric = (8 * (f[0] - f[1]) - (f[2] - f[3])) / (12 * h);
      if (smooth) break;
      if (attempt + 1 < kMaxStepReductions) ++result.kink_adjusted;
    }
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double err = std::abs(a - numeric) / denom;
    if (err > result.max_relative_error || result.worst_index < 0) {
      result.max_relative_error = err;
      result.worst_index = static_cast<std::int64_t>(i);
      result.analytic_at_worst = a;
      result.numeric_at_worst = numeric;
    }
  }
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double eps,
                  double scale_floor) {
  return grad_check_detailed(fn, x, eps, scale_floor).max_relative_error;
}

}  // namespace boxformer
