#include <gtest/gtest.h>

#include <filesystem>

#include "nmask/checkpoint.hpp"
#include "nmask/networks.hpp"
#include "nmask/optim.hpp"

using namespace nmask;

namespace {

Tensor random_batch(std::size_t n, std::uint64_t seed, std::size_t hw = 28) {
  Rng rng(seed);
  Array a(Shape{n, 1, hw, hw});
  for (auto& v : a.vec()) v = rng.normal();
  return Tensor(std::move(a));
}

bool same_params(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].value() != b[i].value()) return false;
  return true;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("nmask_test_" + name)).string();
}

}  // namespace

TEST(Init, SameSeedBitwiseIdentical) {
  ClassifierNet a(ClassifierSpec{}, 11), b(ClassifierSpec{}, 11);
  EXPECT_TRUE(same_params(a.parameters(), b.parameters()));
  PolicyNet p(PolicySpec{}, 3), q(PolicySpec{}, 3);
  EXPECT_TRUE(same_params(p.parameters(), q.parameters()));
}

TEST(Init, DifferentSeedsDiffer) {
  ClassifierNet a(ClassifierSpec{}, 1), b(ClassifierSpec{}, 2);
  EXPECT_FALSE(same_params(a.parameters(), b.parameters()));
}

TEST(Init, InvalidSpecIsConfigError) {
  ClassifierSpec s;
  s.body.widths.clear();
  s.body.strides.clear();
  EXPECT_THROW(ClassifierNet(s, 0), ConfigError);
  ClassifierSpec t;
  t.num_classes = 1;
  EXPECT_THROW(ClassifierNet(t, 0), ConfigError);
  PolicySpec p;
  p.body.strides = {2};
  EXPECT_THROW(PolicyNet(p, 0), ConfigError);
}

TEST(Copy, IsDeep) {
  ClassifierNet a(ClassifierSpec{}, 1);
  ClassifierNet b = a;
  b.parameters()[0].mutable_value()[0] += 1.0;
  EXPECT_NE(a.parameters()[0].value()[0], b.parameters()[0].value()[0]);
}

TEST(Classifier, ZeroHeadGivesZeroLogits) {
  ClassifierNet net(ClassifierSpec{}, 4);
  auto& p = net.parameters();
  p[p.size() - 2].mutable_value() = Array(p[p.size() - 2].shape());
  Tensor logits = classifier_forward(random_batch(3, 1), net);
  ASSERT_EQ(logits.shape(), (Shape{3, 12}));
  for (double v : logits.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Classifier, WrongInputSizeIsShapeError) {
  ClassifierNet net(ClassifierSpec{}, 4);
  EXPECT_THROW(classifier_forward(random_batch(1, 1, 20), net), ShapeError);
}

TEST(Policy, ZeroHeadGivesZeroMaps) {
  PolicyNet net(PolicySpec{}, 5);
  auto [a, b] = policy_forward(random_batch(4, 2), net);
  ASSERT_EQ(a.shape(), (Shape{4, 8, 8}));
  for (double v : a.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : b.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Policy, IdenticalImagesGiveIdenticalMaps) {
  PolicySpec spec;
  spec.zero_head = false;
  PolicyNet net(spec, 6);
  Array one = random_batch(1, 3).value();
  Array two(Shape{2, 1, 28, 28});
  std::copy(one.data().begin(), one.data().end(), two.data().begin());
  std::copy(one.data().begin(), one.data().end(), two.data().begin() + 784);
  auto [a, b] = policy_forward(Tensor(two), net);
  for (std::size_t k = 0; k < 64; ++k) {
    EXPECT_EQ(a.value()[k], a.value()[64 + k]);
    EXPECT_EQ(b.value()[k], b.value()[64 + k]);
  }
  double spread = 0.0;
  for (std::size_t k = 1; k < 64; ++k) spread += std::abs(a.value()[k] - a.value()[0]);
  EXPECT_GT(spread, 0.0);
}

TEST(Policy, WrongInputSizeIsShapeError) {
  PolicyNet net(PolicySpec{}, 5);
  EXPECT_THROW(policy_forward(random_batch(1, 1, 20), net), ShapeError);
}

TEST(Ema, HandEvaluatedBlend) {
  EmaState s = EmaState::zeros(1, 1, 0.9, 0.99);
  s.alpha_dataset[0] = 1.0;
  s.beta_dataset[0] = 0.0;
  Tensor a(Array(Shape{1, 1, 1}, 2.0)), b(Array(Shape{1, 1, 1}, 1.0));
  auto r = blend_params(a, b, s);
  EXPECT_EQ(r.alpha_new.value()[0], 0.9 * 1.0 + (1.0 - 0.9) * 2.0);
  EXPECT_NEAR(r.alpha_new.value()[0], 1.1, 1e-15);
  EXPECT_EQ(r.beta_new.value()[0], (1.0 - 0.9) * 1.0);
  EXPECT_EQ(r.next.beta_dataset[0], (1.0 - 0.99) * 1.0);
  EXPECT_NEAR(r.next.beta_dataset[0], 0.01, 1e-15);
  EXPECT_EQ(r.next.alpha_dataset[0], 0.99 * 1.0 + (1.0 - 0.99) * 2.0);
  EXPECT_EQ(r.params.alpha.value()[0], std::exp(r.alpha_new.value()[0]));
}

TEST(Ema, DatasetUpdateUsesBatchMean) {
  EmaState s = EmaState::zeros(1, 2);
  Tensor a(Array(Shape{2, 1, 2}, std::vector<double>{0.0, 4.0, 2.0, 0.0}));
  auto r = blend_params(a, a, s);
  EXPECT_EQ(r.next.alpha_dataset[0], (1.0 - 0.99) * 1.0);
  EXPECT_EQ(r.next.alpha_dataset[1], (1.0 - 0.99) * 2.0);
}

TEST(Ema, FixedPoint) {
  Rng rng(7);
  EmaState s = EmaState::zeros(3, 3);
  for (auto& v : s.alpha_dataset.vec()) v = rng.normal();
  for (auto& v : s.beta_dataset.vec()) v = rng.normal();
  Array ai(Shape{2, 3, 3}), bi(Shape{2, 3, 3});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 9; ++k) {
      ai[n * 9 + k] = s.alpha_dataset[k];
      bi[n * 9 + k] = s.beta_dataset[k];
    }
  auto r = blend_params(Tensor(ai), Tensor(bi), s);
  for (std::size_t k = 0; k < 18; ++k) {
    EXPECT_NEAR(r.alpha_new.value()[k], ai[k], 1e-15);
    EXPECT_NEAR(r.beta_new.value()[k], bi[k], 1e-15);
  }
  for (std::size_t k = 0; k < 9; ++k) {
    EXPECT_NEAR(r.next.alpha_dataset[k], s.alpha_dataset[k], 1e-15);
    EXPECT_NEAR(r.next.beta_dataset[k], s.beta_dataset[k], 1e-15);
  }
}

TEST(Ema, GradientReachesImageMapsOnly) {
  EmaState s = EmaState::zeros(2, 2);
  Tensor a = Tensor::parameter(Array(Shape{1, 2, 2}, 0.5));
  auto r = blend_params(a, a, s);
  auto g = grad(sum(r.alpha_new), std::vector<Tensor>{a});
  for (double v : g[0].data()) EXPECT_NEAR(v, 1.0 - 0.9, 1e-15);
}

TEST(Ema, ShapeAndTauValidation) {
  EmaState s = EmaState::zeros(2, 2);
  EXPECT_THROW(blend_params(Tensor(Array(Shape{1, 3, 2})), Tensor(Array(Shape{1, 3, 2})), s), ShapeError);
  EXPECT_THROW(EmaState::zeros(2, 2, 1.0, 0.5), ConfigError);
}

TEST(Sgd, PlainStep) {
  Array p(Shape{1}, 1.0), g(Shape{1}, 0.5), buf(Shape{1});
  sgd_step(p, g, buf, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
}

TEST(Sgd, DecayOnly) {
  Array p(Shape{1}, 1.0), g(Shape{1}, 0.0), buf(Shape{1});
  sgd_step(p, g, buf, 0.1, 0.0, 0.1);
  EXPECT_DOUBLE_EQ(p[0], 0.99);
}

TEST(Sgd, MomentumRecursion) {
  Array p(Shape{1}, 1.0), g(Shape{1}, 1.0), buf(Shape{1});
  sgd_step(p, g, buf, 0.1, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(buf[0], 1.0);
  EXPECT_DOUBLE_EQ(p[0], 0.9);
  sgd_step(p, g, buf, 0.1, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(buf[0], 1.9);
  EXPECT_DOUBLE_EQ(p[0], 0.71);
}

TEST(Sgd, NonFiniteGradientAborts) {
  Array p(Shape{1}, 1.0), g(Shape{1}, std::nan("")), buf(Shape{1});
  EXPECT_THROW(sgd_step(p, g, buf, 0.1, 0.0, 0.0), DivergenceError);
}

TEST(Schedule, StepDecay) {
  Schedule s{ScheduleKind::step, 30, 0.1};
  EXPECT_DOUBLE_EQ(lr_schedule(s, 0, 90, 0.1), 0.1);
  EXPECT_NEAR(lr_schedule(s, 29, 90, 0.1), 0.1, 1e-15);
  EXPECT_NEAR(lr_schedule(s, 30, 90, 0.1), 0.01, 1e-15);
  EXPECT_NEAR(lr_schedule(s, 60, 90, 0.1), 0.001, 1e-15);
}

TEST(Schedule, Cosine) {
  Schedule s{ScheduleKind::cosine, 0, 0.0};
  EXPECT_DOUBLE_EQ(lr_schedule(s, 0, 10, 0.2), 0.2);
  EXPECT_NEAR(lr_schedule(s, 5, 10, 0.2), 0.1, 1e-15);
  EXPECT_THROW(parse_schedule("linear"), ConfigError);
}

TEST(Checkpoint, BitwiseRoundTrip) {
  ClassifierNet c(ClassifierSpec{}, 1);
  PolicySpec ps;
  ps.zero_head = false;
  Checkpoint ck;
  ck.classifier = c;
  ck.policy = PolicyNet(ps, 2);
  EmaState e = EmaState::zeros(8, 8, 0.8, 0.95);
  e.alpha_dataset[3] = -0.125;
  ck.ema = e;
  ck.epoch = 7;
  Sgd opt(c.parameters(), 0.9, 1e-4);
  ck.classifier_momentum = opt.buffers();
  ck.policy_momentum = Sgd(ck.policy->parameters(), 0.9, 1e-4).buffers();
  (*ck.policy_momentum)[0][0] = 0.25;
  const std::string path = temp_path("roundtrip.nmck");
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);
  EXPECT_TRUE(same_params(back.classifier.parameters(), c.parameters()));
  ASSERT_TRUE(back.policy.has_value());
  EXPECT_TRUE(same_params(back.policy->parameters(), ck.policy->parameters()));
  ASSERT_TRUE(back.ema.has_value());
  EXPECT_EQ(*back.ema, e);
  EXPECT_EQ(back.epoch, 7u);
  ASSERT_TRUE(back.policy_momentum.has_value());
  EXPECT_EQ((*back.policy_momentum)[0][0], 0.25);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
  std::filesystem::remove(path);
}

TEST(Checkpoint, ClassifierOnlyAndCorruption) {
  Checkpoint ck;
  ck.classifier = ClassifierNet(ClassifierSpec{}, 3);
  auto bytes = serialize_checkpoint(ck);
  Checkpoint back = parse_checkpoint(io::Reader(bytes, "mem"));
  EXPECT_FALSE(back.policy.has_value());
  EXPECT_TRUE(same_params(back.classifier.parameters(), ck.classifier.parameters()));
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(parse_checkpoint(io::Reader(truncated, "mem")), IoError);
  auto bad = bytes;
  bad[0] ^= 0xff;
  EXPECT_THROW(parse_checkpoint(io::Reader(bad, "mem")), IoError);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.nmck"), IoError);
}
