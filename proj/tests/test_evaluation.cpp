#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"

using namespace nmask;

TEST(Metrics, PerfectPredictionsThreeClasses) {
  Array s(Shape{6, 3});
  std::vector<int> y{0, 1, 2, 0, 1, 2};
  for (std::size_t i = 0; i < 6; ++i) s[i * 3 + static_cast<std::size_t>(y[i])] = 1.0;
  auto r = compute_metrics(s, y);
  EXPECT_EQ(r.macro_f1, 1.0);
  EXPECT_EQ(r.macro_precision, 1.0);
  EXPECT_EQ(r.macro_recall, 1.0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.balanced_accuracy, 1.0);
  EXPECT_EQ(r.auroc_macro_ovr, 1.0);
}

TEST(Metrics, BinaryPerfectRanking) {
  Array s(Shape{2, 2}, std::vector<double>{0.1, 0.9, 0.9, 0.1});
  auto r = compute_metrics(s, std::vector<int>{1, 0});
  EXPECT_EQ(r.per_class[1].auroc, 1.0);
  EXPECT_EQ(r.auroc_macro_ovr, 1.0);
}

TEST(Metrics, SingleClassLabelsLeaveAurocUndefined) {
  Array s(Shape{3, 2}, std::vector<double>{1, 0, 0, 1, 1, 0});
  auto r = compute_metrics(s, std::vector<int>{0, 0, 0});
  EXPECT_FALSE(r.auroc_defined);
  EXPECT_TRUE(std::isnan(r.auroc_macro_ovr));
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Metrics, Errors) {
  EXPECT_THROW(compute_metrics(Array(Shape{2, 2}), std::vector<int>{0, 2}), IndexError);
  EXPECT_THROW(compute_metrics(Array(Shape{2, 2}), std::vector<int>{0}), ShapeError);
}

TEST(Metrics, MatchesBruteForceOracle) {
  Rng rng(2024);
  for (int t = 0; t < 100; ++t) {
    auto in = oracle::random_instance(rng);
    auto r = compute_metrics(in.scores, in.labels);
    auto o = oracle::confusion_metrics(in.scores, in.labels);
    EXPECT_EQ(r.macro_f1, o.macro_f1);
    EXPECT_EQ(r.macro_precision, o.macro_precision);
    EXPECT_EQ(r.macro_recall, o.macro_recall);
    EXPECT_EQ(r.accuracy, o.accuracy);
    EXPECT_EQ(r.balanced_accuracy, o.balanced_accuracy);
    const double a = oracle::macro_auroc(in.scores, in.labels);
    if (std::isnan(a)) {
      EXPECT_TRUE(std::isnan(r.auroc_macro_ovr));
    } else {
      EXPECT_NEAR(r.auroc_macro_ovr, a, 1e-12);
    }
  }
}

TEST(Stats, TQuantilesMatchTables) {
  EXPECT_NEAR(t_quantile_975(2), 4.303, 1e-3);
  EXPECT_NEAR(t_quantile_975(6), 2.447, 1e-3);
  EXPECT_NEAR(t_quantile_975(9), 2.262, 1e-3);
  EXPECT_THROW(t_quantile_975(0), ContractError);
}

TEST(Stats, MeanCi) {
  const std::vector<double> xs{1.0, 2.0, 3.0};
  auto r = mean_ci(xs);
  EXPECT_DOUBLE_EQ(r.mean, 2.0);
  EXPECT_NEAR(r.half_width, t_quantile_975(2) * 1.0 / std::sqrt(3.0), 1e-12);
  EXPECT_TRUE(std::isnan(mean_ci(std::vector<double>{1.0}).half_width));
}

TEST(Stats, Spearman) {
  const std::vector<double> a{1, 2, 3, 4}, b{10, 20, 25, 100}, c{4, 3, 2, 1}, k{1, 1, 1, 1};
  EXPECT_NEAR(spearman(a, b), 1.0, 1e-12);
  EXPECT_NEAR(spearman(a, c), -1.0, 1e-12);
  EXPECT_TRUE(std::isnan(spearman(a, k)));
  EXPECT_EQ(midranks(std::vector<double>{5, 1, 5}), (std::vector<double>{2.5, 1.0, 2.5}));
}

TEST(Features, IdenticalInputsIdenticalRows) {
  SynthSpec spec;
  spec.samples_per_class = 2;
  Dataset ds = synth_generate(spec);
  ds.images[1] = ds.images[0];
  ClassifierNet net(ClassifierSpec{}, 3);
  std::vector<std::size_t> idx{0, 1, 2};
  Array f = extract_features(net, ds, idx, 2);
  ASSERT_EQ(f.shape(), (Shape{3, 32}));
  for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(f[j], f[32 + j]);
}

TEST(Probe, SeparableBlobsPerfect) {
  Rng rng(1);
  Array x;
  std::vector<int> y;
  oracle::gaussian_blobs(2, 150, 8, 6.0, rng, x, y);
  auto splits = oracle::class_splits(y, 2, 0.5, 0.2);
  ProbeConfig cfg;
  cfg.hidden = 32;
  cfg.trials = 2;
  cfg.patience = 20;
  auto r = mlp_probe(x, y, splits, 2, 5, cfg);
  EXPECT_EQ(r.accuracy.mean, 1.0);
  auto again = mlp_probe(x, y, splits, 2, 5, cfg);
  EXPECT_EQ(again.macro_f1.mean, r.macro_f1.mean);
  EXPECT_EQ(again.trials.size(), 2u);
}

TEST(Probe, ShuffledLabelsWithinPermutationNull) {
  Rng rng(2);
  Array x;
  std::vector<int> y;
  oracle::gaussian_blobs(4, 60, 8, 3.0, rng, x, y);
  auto splits = oracle::class_splits(y, 4, 0.5, 0.2);
  std::vector<int> shuffled = y;
  for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
  std::vector<std::size_t> te;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == Split::test) te.push_back(i);
  std::vector<int> y_te;
  for (auto i : te) y_te.push_back(shuffled[i]);

  ProbeConfig cfg;
  cfg.hidden = 32;
  const Rng root(7);
  std::size_t inside = 0;
  for (std::size_t t = 0; t < 7; ++t) {
    Array s = mlp_probe_scores(x, shuffled, splits, 4, root.split(t), cfg);
    const double f1 = compute_metrics(s, y_te).macro_f1;
    // null: same predictions, labels permuted
    std::vector<double> null;
    std::vector<int> perm = y_te;
    Rng prng(100 + t);
    for (int k = 0; k < 300; ++k) {
      for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[prng.below(i)]);
      null.push_back(compute_metrics(s, perm).macro_f1);
    }
    const auto ci = mean_ci(null);
    double ss = 0.0;
    for (double v : null) ss += (v - ci.mean) * (v - ci.mean);
    const double sd = std::sqrt(ss / static_cast<double>(null.size() - 1));
    inside += std::abs(f1 - ci.mean) <= 3.0 * sd;
  }
  EXPECT_GE(inside, 6u);
}

TEST(Probe, DegenerateTrainSet) {
  Array x(Shape{4, 2}, 1.0);
  std::vector<int> y{0, 0, 1, 1};
  std::vector<Split> s{Split::train, Split::train, Split::test, Split::test};
  EXPECT_THROW(mlp_probe(x, y, s, 2, 0), ConfigError);
}

TEST(LogReg, StationaryPointOfPenalisedObjective) {
  Rng rng(3);
  Array x;
  std::vector<int> y;
  oracle::gaussian_blobs(3, 30, 4, 2.0, rng, x, y);
  auto m = fit_logreg(x, y, 3);
  EXPECT_TRUE(m.converged);
  // finite-difference gradient of summed log-loss + 0.5*||W||^2 at the solution
  auto objective = [&](const std::vector<double>& th) {
    LogReg t = m;
    t.theta = th;
    Array s = t.scores(x);
    double f = 0.0;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      double mx = -1e300;
      for (std::size_t k = 0; k < 3; ++k) mx = std::max(mx, s[i * 3 + k]);
      double z = 0.0;
      for (std::size_t k = 0; k < 3; ++k) z += std::exp(s[i * 3 + k] - mx);
      f += mx + std::log(z) - s[i * 3 + static_cast<std::size_t>(y[i])];
    }
    for (std::size_t p = 0; p < 4 * 3; ++p) f += 0.5 * th[p] * th[p];
    return f;
  };
  for (std::size_t p = 0; p < m.theta.size(); ++p) {
    auto a = m.theta, b = m.theta;
    a[p] += 1e-5;
    b[p] -= 1e-5;
    EXPECT_NEAR((objective(a) - objective(b)) / 2e-5, 0.0, 1e-4) << p;
  }
}

TEST(LowShot, IdenticalTrialsZeroWidth) {
  Rng rng(4);
  Array x;
  std::vector<int> y;
  oracle::gaussian_blobs(2, 40, 4, 1.0, rng, x, y);
  auto splits = oracle::class_splits(y, 2, 0.5, 0.0);
  LowShotConfig cfg;
  cfg.shots = {4, 8};
  cfg.trials = 2;
  cfg.identical_trials = true;
  auto c = lowshot_eval(x, y, splits, 2, 0, cfg);
  ASSERT_EQ(c.points.size(), 2u);
  for (const auto& p : c.points) EXPECT_EQ(p.macro_f1.half_width, 0.0);
}

TEST(LowShot, SkipsShotsLargerThanClassesAndNeedsTest) {
  Rng rng(5);
  Array x;
  std::vector<int> y;
  oracle::gaussian_blobs(2, 20, 3, 2.0, rng, x, y);
  auto splits = oracle::class_splits(y, 2, 0.5, 0.0);
  LowShotConfig cfg;
  cfg.shots = {4, 16};
  cfg.trials = 3;
  auto c = lowshot_eval(x, y, splits, 2, 0, cfg);
  EXPECT_EQ(c.points.size(), 1u);
  EXPECT_EQ(c.warnings.size(), 1u);
  std::vector<Split> no_test(y.size(), Split::train);
  EXPECT_THROW(lowshot_eval(x, y, no_test, 2, 0, cfg), ConfigError);
}

TEST(LowShot, DeterministicForSeed) {
  Rng rng(6);
  Array x;
  std::vector<int> y;
  oracle::gaussian_blobs(3, 30, 3, 1.5, rng, x, y);
  auto splits = oracle::class_splits(y, 3, 0.5, 0.0);
  LowShotConfig cfg;
  cfg.shots = {2, 4, 8};
  cfg.trials = 4;
  auto a = lowshot_eval(x, y, splits, 3, 9, cfg), b = lowshot_eval(x, y, splits, 3, 9, cfg);
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i].trial_macro_f1, b.points[i].trial_macro_f1);
}

TEST(Histogram, OnesMaskLeavesHistogramUnchanged) {
  Rng rng(7);
  std::vector<Array> ims, masks;
  for (int i = 0; i < 3; ++i) {
    Array im(Shape{1, 6, 6});
    for (auto& v : im.vec()) v = rng.uniform();
    ims.push_back(im);
    masks.emplace_back(Shape{6, 6}, 1.0);
  }
  const std::vector<std::uint8_t> mod{0, 1, 1};
  const std::vector<std::size_t> ids{0, 1, 2};
  auto r = histogram_report(ims, masks, mod, ids, 16);
  for (const auto& h : r.images) EXPECT_EQ(h.original, h.masked);
  EXPECT_EQ(r.dispersion_original, r.dispersion_masked);
  EXPECT_EQ(r.modalities.size(), 2u);
}

TEST(Histogram, HalfMaskCompressesTowardZero) {
  Array im(Shape{1, 2, 2}, std::vector<double>{0.2, 0.4, 0.8, 1.0});
  std::vector<Array> ims{im}, masks{Array(Shape{2, 2}, 0.5)};
  const std::vector<std::uint8_t> mod{0};
  const std::vector<std::size_t> ids{0};
  auto r = histogram_report(ims, masks, mod, ids, 10);
  const auto& h = r.images[0];
  for (double v : im.data()) {
    EXPECT_GE(h.original[bin_of(v, 10)], 1u);
    EXPECT_GE(h.masked[bin_of(v / 2, 10)], 1u);
  }
  EXPECT_DOUBLE_EQ(h.mean_masked, h.mean_original / 2);
  EXPECT_EQ(h.mask[bin_of(0.5, 10)], 4u);
}

TEST(Histogram, MaskOutsideUnitIntervalRejected) {
  std::vector<Array> ims{Array(Shape{1, 2, 2})}, masks{Array(Shape{2, 2}, 1.5)};
  const std::vector<std::uint8_t> mod{0};
  const std::vector<std::size_t> ids{0};
  EXPECT_THROW(histogram_report(ims, masks, mod, ids), DomainError);
}
