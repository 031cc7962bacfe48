#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "nmask/distributions.hpp"
#include "nmask/gradcheck.hpp"

using namespace nmask;

namespace {

BetaParams constant_params(Shape s, double a, double b) {
  return BetaParams{Tensor(Array(s, a)), Tensor(Array(std::move(s), b))};
}

double pooled_mean(const Array& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s / static_cast<double>(a.numel());
}

}  // namespace

TEST(Rng, SeedZeroReferenceOutputs) {
  Rng r(0);
  EXPECT_EQ(r.next(), 0x99ec5f36cb75f2b4ULL);
  EXPECT_EQ(r.next(), 0xbf6e1f784956452aULL);
  EXPECT_EQ(r.next(), 0x1a5f849d4933e6e0ULL);
  EXPECT_EQ(r.next(), 0x6aa594f1262d2d2cULL);
}

TEST(Rng, SplitIsIndependentOfParentPosition) {
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) b.next();
  EXPECT_EQ(a.split(3, 4).next(), b.split(3, 4).next());
  EXPECT_NE(a.split(3).next(), a.split(4).next());
}

TEST(Rng, BelowStaysInRange) {
  Rng r(1);
  std::vector<int> counts(7);
  for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(GammaSample, DeterministicForFixedSeed) {
  Rng a(42), b(42);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(gamma_sample(2.0, a), gamma_sample(2.0, b));
}

TEST(GammaSample, MomentsMatchShape) {
  for (double k : {0.3, 1.0, 2.0, 7.5}) {
    Rng rng(9);
    const int n = 100000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double g = gamma_sample(k, rng);
      s += g;
      s2 += g * g;
    }
    const double m = s / n, var = s2 / n - m * m;
    // mean k and variance k; tolerance ~5 standard errors
    EXPECT_NEAR(m, k, 5.0 * std::sqrt(k / n)) << k;
    EXPECT_NEAR(var, k, 0.05 * k + 0.01) << k;
  }
}

TEST(GammaSample, NonPositiveShapeIsDomainError) {
  Rng rng(0);
  EXPECT_THROW(gamma_sample(0.0, rng), DomainError);
  EXPECT_THROW(gamma_sample(-1.0, rng), DomainError);
}

TEST(GammaSample, TinyShapeStaysPositive) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) EXPECT_GT(log_gamma_sample(0.01, rng), -1e6);
}

TEST(BetaSample, SymmetricMean) {
  Rng rng(1);
  EXPECT_NEAR(pooled_mean(beta_sample(constant_params({100000}, 2.0, 2.0), rng)), 0.5, 0.005);
}

TEST(BetaSample, SkewedMean) {
  Rng rng(2);
  EXPECT_NEAR(pooled_mean(beta_sample(constant_params({100000}, 5.0, 1.0), rng)), 5.0 / 6.0, 0.005);
}

TEST(BetaSample, UniformKolmogorovSmirnov) {
  Rng rng(3);
  Array x = beta_sample(constant_params({100000}, 1.0, 1.0), rng);
  std::vector<double> v = x.vec();
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    d = std::max({d, std::abs((i + 1) / n - v[i]), std::abs(v[i] - i / n)});
  EXPECT_LT(d, 0.01);
}

TEST(BetaSample, ValuesInsideOpenInterval) {
  Rng rng(4);
  Array x = beta_sample(constant_params({20000}, 0.05, 0.05), rng);
  for (double v : x.data()) {
    EXPECT_GE(v, kBetaEps);
    EXPECT_LE(v, 1.0 - kBetaEps);
  }
}

TEST(BetaSample, InvalidParamsThrow) {
  Rng rng(0);
  EXPECT_THROW(beta_sample(constant_params({2}, 0.0, 1.0), rng), DomainError);
  EXPECT_THROW(beta_sample(BetaParams{Tensor(Array(Shape{2}, 1.0)), Tensor(Array(Shape{3}, 1.0))}, rng), ShapeError);
}

TEST(BetaLogProb, UniformIsExactlyZero) {
  Array x(Shape{5}, std::vector<double>{1e-6, 0.1, 0.5, 0.9, 1 - 1e-6});
  Tensor lp = beta_log_prob(x, constant_params({5}, 1.0, 1.0));
  for (double v : lp.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(BetaLogProb, ClosedFormAtHalf) {
  Tensor lp = beta_log_prob(Array(Shape{1}, 0.5), constant_params({1}, 2.0, 2.0));
  EXPECT_NEAR(lp.item(), std::log(1.5), 1e-12);
}

TEST(BetaLogProb, MatchesClosedFormEverywhere) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const double a = 0.2 + 6 * rng.uniform(), b = 0.2 + 6 * rng.uniform(), x = rng.uniform();
    const double expect = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1) * std::log(x) +
                          (b - 1) * std::log1p(-x);
    EXPECT_NEAR(beta_log_prob(Array(Shape{1}, x), constant_params({1}, a, b)).item(), expect, 1e-10);
  }
}

TEST(BetaLogProb, OutsideUnitIntervalIsDomainError) {
  EXPECT_THROW(beta_log_prob(Array(Shape{1}, 0.0), constant_params({1}, 2.0, 2.0)), DomainError);
  EXPECT_THROW(beta_log_prob(Array(Shape{1}, 1.0), constant_params({1}, 2.0, 2.0)), DomainError);
}

TEST(BetaLogProb, GradientMatchesDigammaForm) {
  const double a = 2.5, b = 1.5, x = 0.3;
  Tensor ta = Tensor::parameter(Array(Shape{1}, a)), tb = Tensor::parameter(Array(Shape{1}, b));
  auto g = grad(sum(beta_log_prob(Array(Shape{1}, x), BetaParams{ta, tb})), std::vector<Tensor>{ta, tb});
  EXPECT_NEAR(g[0][0], digamma(a + b) - digamma(a) + std::log(x), 1e-12);
  EXPECT_NEAR(g[1][0], digamma(a + b) - digamma(b) + std::log1p(-x), 1e-12);
}

TEST(BetaLogProb, FiniteDifferenceCheck) {
  Array x(Shape{2, 2}, std::vector<double>{0.1, 0.4, 0.7, 0.95});
  auto r = gradcheck([&](const std::vector<Tensor>& p) { return sum(beta_log_prob(x, BetaParams{p[0], p[1]})); },
                     {Array(Shape{2, 2}, std::vector<double>{0.5, 1.0, 3.0, 6.0}),
                      Array(Shape{2, 2}, std::vector<double>{4.0, 0.7, 1.2, 2.0})});
  EXPECT_LT(r.max_rel_error, 1e-6);
}
