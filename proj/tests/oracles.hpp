#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary. Deliberately naive.

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>
#include <vector>

#include "nmask/nmask.hpp"

namespace oracle {

using namespace nmask;

struct Metrics {
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0, accuracy = 0, balanced_accuracy = 0;
  std::vector<double> precision, recall, f1;
};

// Full C x C confusion matrix; first maximal column wins ties.
inline Metrics confusion_metrics(const Array& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  std::vector<std::vector<std::size_t>> cm(c, std::vector<std::size_t>(c, 0));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (scores[i * c + k] > scores[i * c + best]) best = k;
    ++cm[static_cast<std::size_t>(labels[i])][best];
  }
  Metrics m;
  std::size_t present = 0, diag = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm[k][j];
      col += cm[j][k];
    }
    diag += cm[k][k];
    const double p = col ? static_cast<double>(cm[k][k]) / static_cast<double>(col) : 0.0;
    const double r = row ? static_cast<double>(cm[k][k]) / static_cast<double>(row) : 0.0;
    const double f = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.f1.push_back(f);
    if (row == 0) continue;
    ++present;
    m.macro_precision += p;
    m.macro_recall += r;
    m.macro_f1 += f;
  }
  m.macro_precision /= static_cast<double>(present);
  m.macro_recall /= static_cast<double>(present);
  m.macro_f1 /= static_cast<double>(present);
  m.balanced_accuracy = m.macro_recall;
  m.accuracy = static_cast<double>(diag) / static_cast<double>(n);
  return m;
}

// One-vs-rest AUROC by counting every (positive, negative) pair; NaN when a
// class has no positives or no negatives.
inline double pairwise_auroc(const Array& scores, const std::vector<int>& labels, std::size_t k) {
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (static_cast<std::size_t>(labels[i]) != k) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<std::size_t>(labels[j]) == k) continue;
      const double a = scores[i * c + k], b = scores[j * c + k];
      wins += a > b ? 1.0 : a == b ? 0.5 : 0.0;
      pairs += 1.0;
    }
  }
  return pairs > 0 ? wins / pairs : std::nan("");
}

inline double macro_auroc(const Array& scores, const std::vector<int>& labels) {
  double s = 0.0;
  std::size_t k_defined = 0;
  for (std::size_t k = 0; k < scores.dim(1); ++k) {
    const double a = pairwise_auroc(scores, labels, k);
    if (std::isnan(a)) continue;
    s += a;
    ++k_defined;
  }
  return k_defined ? s / static_cast<double>(k_defined) : std::nan("");
}

// Random small scoring instance with ties and occasionally missing classes.
struct Instance {
  Array scores;
  std::vector<int> labels;
};

inline Instance random_instance(Rng& rng) {
  const std::size_t n = 2 + rng.below(30), c = 2 + rng.below(4);
  Instance in{Array(Shape{n, c}), std::vector<int>(n)};
  const bool coarse = rng.below(2) == 0;  // coarse grids force score ties
  for (auto& v : in.scores.vec()) v = coarse ? static_cast<double>(rng.below(4)) : rng.normal();
  for (auto& y : in.labels) y = static_cast<int>(rng.below(c));
  return in;
}

// Beta density evaluated through the library's log-density.
inline double beta_density(double x, double a, double b) {
  return std::exp(beta_log_prob(Array(Shape{1}, x), BetaParams{Tensor(Array(Shape{1}, a)), Tensor(Array(Shape{1}, b))}).item());
}

// Integral over (0,1); tanh-sinh copes with integrable endpoint singularities.
template <class F>
double integrate01(F f) {
  boost::math::quadrature::tanh_sinh<double> q;
  return q.integrate(f, 0.0, 1.0);
}

// E[(M - t)^2] for M ~ Beta(a, b), by quadrature.
inline double expected_cost(double a, double b, double t) {
  return integrate01([&](double x) { return (x - t) * (x - t) * beta_density(x, a, b); });
}

// Two Gaussian blobs per class in d dimensions, centres `sep` apart.
inline void gaussian_blobs(std::size_t classes, std::size_t per_class, std::size_t d, double sep, Rng& rng,
                           Array& x, std::vector<int>& y) {
  std::vector<std::vector<double>> centres(classes, std::vector<double>(d));
  for (auto& c : centres)
    for (auto& v : c) v = sep * rng.normal();
  x = Array(Shape{classes * per_class, d});
  y.clear();
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t row = y.size();
      for (std::size_t j = 0; j < d; ++j) x[row * d + j] = centres[k][j] + rng.normal();
      y.push_back(static_cast<int>(k));
    }
}

// Per-class split: fractions of each class to train/val/test, in order.
inline std::vector<Split> class_splits(const std::vector<int>& y, std::size_t classes, double train, double val) {
  std::vector<Split> s(y.size());
  std::vector<std::size_t> seen(classes, 0), total(classes, 0);
  for (int v : y) ++total[static_cast<std::size_t>(v)];
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto k = static_cast<std::size_t>(y[i]);
    const double f = static_cast<double>(seen[k]++) / static_cast<double>(total[k]);
    s[i] = f < train ? Split::train : f < train + val ? Split::val : Split::test;
  }
  return s;
}

}  // namespace oracle
