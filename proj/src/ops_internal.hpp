#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "boxformer/ops.hpp"

namespace boxformer::detail {

[[noreturn]] void shape_mismatch(std::string_view op, const Shape& a, const Shape& b);

std::vector<std::int64_t> contiguous_strides(const Shape& shape);

/// Strides of `in` viewed under broadcast to `out` (0 on broadcast dims).
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out);

Shape broadcast_shapes(std::string_view op, const Shape& a, const Shape& b);

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank, std::string_view op);

/// Calls f(i, ia, ib) for every flat output index i in row-major order with
/// the matching flat offsets into two broadcast operands.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, F&& f) {
  const auto rank = static_cast<std::int64_t>(out.size());
  const auto total = numel(out);
  if (total == 0) return;
  if (rank == 0) {
    f(std::int64_t{0}, std::int64_t{0}, std::int64_t{0});
    return;
  }
  const auto inner = out[static_cast<std::size_t>(rank - 1)];
  const auto ia_step = sa[static_cast<std::size_t>(rank - 1)];
  const auto ib_step = sb[static_cast<std::size_t>(rank - 1)];
  std::vector<std::int64_t> counter(static_cast<std::size_t>(rank), 0);
  std::int64_t ia = 0;
  std::int64_t ib = 0;
  for (std::int64_t i = 0; i < total; i += inner) {
    std::int64_t a = ia;
    std::int64_t b = ib;
    for (std::int64_t j = 0; j < inner; ++j, a += ia_step, b += ib_step) f(i + j, a, b);
    for (std::int64_t d = rank - 2; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++counter[du];
      ia += sa[du];
      ib += sb[du];
      if (counter[du] < out[du]) break;
      ia -= sa[du] * out[du];
      ib -= sb[du] * out[du];
      counter[du] = 0;
    }
  }
}

}  // namespace boxformer::detail
