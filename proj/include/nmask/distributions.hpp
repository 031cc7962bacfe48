#pragma once

// Gamma and Beta sampling plus the Beta log-density used by the policy.
//
// Mask elements are sampled independently given their (alpha, beta) maps;
// spatial correlation only comes from the post-processing in mask.hpp.

#include <cmath>
#include <limits>
#include <string>

#include "nmask/error.hpp"
#include "nmask/ops.hpp"
#include "nmask/rng.hpp"
#include "nmask/tensor.hpp"

namespace nmask {

/// Samples are clamped to [kBetaEps, 1 - kBetaEps] so log-densities stay finite.
inline constexpr double kBetaEps = 1e-6;

namespace detail {

// Marsaglia-Tsang for shape >= 1; returns log of the draw.
inline double log_gamma_draw_ge1(double k, Rng& rng) {
  const double d = k - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return std::log(d * v);
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

}  // namespace detail

/// log of a Gamma(k, 1) draw. For k < 1 uses Gamma(k) = Gamma(k + 1) * U^(1/k)
/// in log space, so tiny shapes do not underflow to zero.
inline double log_gamma_sample(double k, Rng& rng) {
  if (!(k > 0.0) || !std::isfinite(k)) throw DomainError("gamma_sample: shape must be positive, got " + std::to_string(k));
  if (k >= 1.0) return detail::log_gamma_draw_ge1(k, rng);
  const double lg = detail::log_gamma_draw_ge1(k + 1.0, rng);
  return lg + std::log(rng.uniform()) / k;
}

/// One draw from Gamma(shape k, scale 1).
inline double gamma_sample(double k, Rng& rng) { return std::exp(log_gamma_sample(k, rng)); }

/// Beta(a, b) as X / (X + Y), evaluated as a logistic of log X - log Y.
inline double beta_sample(double a, double b, Rng& rng) {
  const double lx = log_gamma_sample(a, rng);
  const double ly = log_gamma_sample(b, rng);
  const double m = 1.0 / (1.0 + std::exp(ly - lx));
  return std::clamp(m, kBetaEps, 1.0 - kBetaEps);
}

/// Per-element Beta parameters; alpha and beta share one shape.
struct BetaParams {
  Tensor alpha;
  Tensor beta;

  void validate() const {
    if (alpha.shape() != beta.shape())
      throw ShapeError("BetaParams: alpha " + shape_str(alpha.shape()) + " vs beta " + shape_str(beta.shape()));
    for (std::size_t i = 0; i < alpha.numel(); ++i)
      if (!(alpha.value()[i] > 0.0) || !(beta.value()[i] > 0.0) || !std::isfinite(alpha.value()[i]) ||
          !std::isfinite(beta.value()[i]))
        throw DomainError("BetaParams: parameters must be finite and positive");
  }
};

/// Independent element-wise draws M[i] ~ Beta(alpha[i], beta[i]).
inline Array beta_sample(const BetaParams& params, Rng& rng) {
  params.validate();
  Array out(params.alpha.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = beta_sample(params.alpha.value()[i], params.beta.value()[i], rng);
  return out;
}

/// Element-wise log Beta density of `x` under `params`. Gradients reach alpha
/// and beta only; `x` enters as a constant (score-function estimator).
inline Tensor beta_log_prob(const Array& x, const BetaParams& params) {
  params.validate();
  if (x.shape() != params.alpha.shape())
    throw ShapeError("beta_log_prob: sample " + shape_str(x.shape()) + " vs params " +
                     shape_str(params.alpha.shape()));
  Array log_x(x.shape()), log_1mx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (!(x[i] > 0.0 && x[i] < 1.0)) throw DomainError("beta_log_prob: sample outside (0,1)");
    log_x[i] = std::log(x[i]);
    log_1mx[i] = std::log1p(-x[i]);
  }
  const Tensor& a = params.alpha;
  const Tensor& b = params.beta;
  Tensor norm = sub(sub(lgamma(add(a, b)), lgamma(a)), lgamma(b));
  Tensor body = add(mul(add_scalar(a, -1.0), Tensor(std::move(log_x))), mul(add_scalar(b, -1.0), Tensor(std::move(log_1mx))));
  return add(norm, body);
}

}  // namespace nmask
