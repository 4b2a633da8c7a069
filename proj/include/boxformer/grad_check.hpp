#pragma once

#include <functional>

#include "boxformer/tensor.hpp"

namespace boxformer {

struct GradCheckResult {
  double max_relative_error = 0;
  std::int64_t worst_index = -1;
  double analytic_at_worst = 0;
  double numeric_at_worst = 0;
  /// Step reductions forced by a probe crossing a relu/abs branch.
  std::int64_t kink_adjusted = 0;
};

constexpr int kMaxStepReductions = 6;

/// Compares the reverse-mode gradient of `fn` at `x` against fourth-order
/// central differences with step `eps`, element by element. The step is
/// divided by 4 (up to kMaxStepReductions times) while a probe lands on a
/// different relu/abs branch than x. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8, scale_floor * max_j |analytic_j|).
/// `fn` must be deterministic and return a one-element tensor.
GradCheckResult grad_check_detailed(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double eps,
                                    double scale_floor = 0);

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double eps,
                  double scale_floor = 0);

}  // namespace boxformer
