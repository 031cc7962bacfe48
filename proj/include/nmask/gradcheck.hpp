#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "nmask/tensor.hpp"

namespace nmask {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // stencil crossed a non-smooth point
};

/// Identifies the smooth piece an input lies in (e.g. a hash of relu
/// on/off patterns). Coordinates whose +h and -h probes land in a different
/// piece than the base point are skipped: central differences are no oracle
/// across a kink.
using SmoothRegion = std::function<std::uint64_t(const std::vector<Tensor>&)>;

/// Central finite-difference check of `fn` (scalar output) at `inputs`.
/// Relative error is |analytic - numeric| / max(|analytic| + |numeric|, floor).
/// `max_per_input` > 0 checks only that many evenly spaced coordinates per input.
inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                 const std::vector<Array>& inputs, double h = 1e-5, double floor = 1e-4,
                                 std::size_t max_per_input = 0, const SmoothRegion& region = {}) {
  std::vector<Tensor> params;
  for (const auto& a : inputs) params.push_back(Tensor::parameter(a));
  auto analytic = grad(fn(params), params);
  const std::uint64_t base_region = region ? region(params) : 0;

  GradCheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = inputs[p].numel();
    const std::size_t step = max_per_input && n > max_per_input ? (n + max_per_input - 1) / max_per_input : 1;
    for (std::size_t i = 0; i < n; i += step) {
      std::vector<Tensor> probe;
      for (const auto& a : inputs) probe.push_back(Tensor::constant(a));
      const double x0 = inputs[p][i];
      probe[p].mutable_value()[i] = x0 + h;
      const double fp = fn(probe).item();
      probe[p].mutable_value()[i] = x0 - h;
      const double fm = fn(probe).item();
      if (region) {
        const bool crossed = region(probe) != base_region;
        probe[p].mutable_value()[i] = x0 + h;
        if (crossed || region(probe) != base_region) {
          ++res.skipped;
          continue;
        }
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[p][i];
      const double abs_err = std::abs(a - numeric);
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      res.max_rel_error = std::max(res.max_rel_error, abs_err / std::max(std::abs(a) + std::abs(numeric), floor));
      ++res.checked;
    }
  }
  return res;
}

}  // namespace nmask
