#pragma once

#include <cmath>
#include <limits>

#include "nmask/error.hpp"

namespace nmask {

/// Digamma for x > 0: recurrence psi(x) = psi(x + 1) - 1/x until x >= 6,
/// then the asymptotic series in 1/x^2 (six Bernoulli terms).
inline double digamma(double x) {
  if (!(x > 0.0)) throw DomainError("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 6.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132 - inv2 * 691.0 / 32760)))));
  return acc + std::log(x) - 0.5 * inv - series;
}

inline double log_gamma(double x) {
  if (!(x > 0.0)) throw DomainError("lgamma: argument must be positive");
  return std::lgamma(x);
}

}  // namespace nmask
