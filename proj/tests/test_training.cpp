#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nmask/config.hpp"
#include "nmask/training.hpp"

using namespace nmask;

namespace {

Dataset small_dataset(std::size_t per_class = 8) {
  SynthSpec spec;
  spec.samples_per_class = per_class;
  Dataset ds = synth_generate(spec);
  stratified_split(ds, {0.5, 0.25, 0.25}, 0);
  compute_norm_stats(ds);
  return ds;
}

TrainConfig quick_config(std::size_t epochs = 1) {
  TrainConfig c = RunConfig().train_config();
  c.epochs = epochs;
  c.batch_size = 8;
  return c;
}

bool same_params(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].value() != b[i].value()) return false;
  return a.size() == b.size();
}

StepContext context(std::uint64_t seed, double lr_c, double lr_p) {
  return StepContext{lr_c, lr_p, Rng(seed).split(1), Rng(seed).split(2), "test"};
}

}  // namespace

TEST(ReinforceLoss, UniformMasksLogsumexpIsLog64TimesCost) {
  Tensor lp(Array(Shape{3, 8, 8}));
  Tensor ce(Array(Shape{3}, std::vector<double>{0.5, 1.25, 2.0}));
  const double mean_c = (0.5 + 1.25 + 2.0) / 3.0;
  EXPECT_NEAR(reinforce_loss(lp, ce, Reduction::logsumexp).item(), std::log(64.0) * mean_c, 1e-12);
  EXPECT_EQ(reinforce_loss(lp, ce, Reduction::sum_logprob).item(), 0.0);
}

TEST(ReinforceLoss, SingleElementModesCoincide) {
  Tensor lp(Array(Shape{1, 1, 1}, -0.7));
  Tensor ce(Array(Shape{1}, 1.3));
  EXPECT_EQ(reinforce_loss(lp, ce, Reduction::logsumexp).item(), -0.7 * 1.3);
  EXPECT_EQ(reinforce_loss(lp, ce, Reduction::sum_logprob).item(), -0.7 * 1.3);
}

TEST(ReinforceLoss, CostIsConstantWeight) {
  Tensor lp = Tensor::parameter(Array(Shape{2, 2, 2}, -0.3));
  Tensor ce = Tensor::parameter(Array(Shape{2}, std::vector<double>{1.0, 3.0}));
  auto g = grad(reinforce_loss(lp, ce, Reduction::sum_logprob), std::vector<Tensor>{lp, ce});
  for (double v : g[1].data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g[0][0], 0.5);  // ce_0 / N
  EXPECT_EQ(g[0][4], 1.5);
}

TEST(ReinforceLoss, ErrorsOnMismatchAndUnknownReduction) {
  EXPECT_THROW(reinforce_loss(Tensor(Array(Shape{2, 2, 2})), Tensor(Array(Shape{3})), Reduction::sum_logprob),
               ShapeError);
  EXPECT_THROW(parse_reduction("mean"), ConfigError);
  EXPECT_EQ(parse_reduction("sum"), Reduction::sum_logprob);
}

TEST(PretrainStep, OnesMaskEqualsSupervisedStepBitwise) {
  Dataset ds = small_dataset();
  TrainConfig cfg = quick_config();
  cfg.mask = MaskMode::ones;
  TrainState a = make_train_state(RunConfig().classifier_spec(ds), RunConfig().policy_spec(ds), cfg);
  ClassifierNet b = a.classifier;
  Sgd opt_b(b.parameters(), cfg.momentum, cfg.weight_decay);
  const auto idx = ds.indices(Split::train);
  std::span<const std::size_t> batch(idx.data(), 8);

  pretrain_step(ds, batch, a, cfg, context(3, 0.05, 0.01));
  Rng aug = Rng(3).split(1);
  auto pre = preprocess_batch(ds, batch, cfg.augment, &aug);
  supervised_step(b, opt_b, stack_images(pre), batch_labels(ds, batch), 0.05, cfg.divergence_guard, "ref");
  EXPECT_TRUE(same_params(a.classifier.parameters(), b.parameters()));
}

TEST(PretrainStep, DeterministicForFixedSeed) {
  Dataset ds = small_dataset();
  TrainConfig cfg = quick_config();
  auto cspec = RunConfig().classifier_spec(ds);
  auto pspec = RunConfig().policy_spec(ds);
  pspec.zero_head = false;
  TrainState a = make_train_state(cspec, pspec, cfg), b = make_train_state(cspec, pspec, cfg);
  const auto idx = ds.indices(Split::train);
  std::span<const std::size_t> batch(idx.data(), 8);
  auto sa = pretrain_step(ds, batch, a, cfg, context(4, 0.05, 0.01));
  auto sb = pretrain_step(ds, batch, b, cfg, context(4, 0.05, 0.01));
  EXPECT_EQ(serialize_checkpoint(a.checkpoint(true)), serialize_checkpoint(b.checkpoint(true)));
  EXPECT_EQ(sa.mean_ce, sb.mean_ce);
  EXPECT_EQ(sa.mask_mean, sb.mask_mean);
  EXPECT_GT(sa.policy_grad_norm, 0.0);
  EXPECT_LT(sa.mask_mean, 1.0);
}

TEST(PretrainStep, PolicyAndClassifierGradientsAreIsolated) {
  // With lr_policy = 0 the classifier trajectory is the same whatever the
  // policy loss reduction, because the classifier only sees mean CE.
  Dataset ds = small_dataset();
  TrainConfig cfg = quick_config();
  auto cspec = RunConfig().classifier_spec(ds);
  auto pspec = RunConfig().policy_spec(ds);
  TrainState a = make_train_state(cspec, pspec, cfg), b = make_train_state(cspec, pspec, cfg);
  TrainConfig cfg_sum = cfg;
  cfg_sum.reduction = Reduction::sum_logprob;
  const auto idx = ds.indices(Split::train);
  std::span<const std::size_t> batch(idx.data(), 8);
  pretrain_step(ds, batch, a, cfg, context(5, 0.05, 0.0));
  pretrain_step(ds, batch, b, cfg_sum, context(5, 0.05, 0.0));
  EXPECT_TRUE(same_params(a.classifier.parameters(), b.classifier.parameters()));
}

TEST(PretrainStep, ZeroHeadPolicyGradientHasZeroMean) {
  SynthSpec spec;
  spec.samples_per_class = 4;
  spec.image_size = 16;
  Dataset ds = synth_generate(spec);
  stratified_split(ds, {0.5, 0.25, 0.25}, 0);
  RunConfig rc;
  rc.set("model.classifier_widths", "4,4");
  rc.set("model.classifier_strides", "1,2");
  rc.set("mask.blur_kernel", "5");
  rc.set("mask.blur_sigma", "2");
  TrainConfig cfg = rc.train_config();
  cfg.reduction = Reduction::sum_logprob;
  cfg.momentum = 0.0;
  TrainState st = make_train_state(rc.classifier_spec(ds), rc.policy_spec(ds), cfg);
  const auto idx = ds.indices(Split::train);

  // Project each step's gradient on three fixed directions.
  Rng dir_rng(11);
  std::vector<std::vector<Array>> dirs(3);
  for (auto& d : dirs)
    for (const auto& p : st.policy.parameters()) {
      Array a(p.shape());
      for (auto& v : a.vec()) v = dir_rng.normal();
      d.push_back(a);
    }
  std::vector<std::vector<double>> proj(3);
  const std::size_t steps = 1000;
  for (std::size_t s = 0; s < steps; ++s) {
    std::span<const std::size_t> batch(idx.data() + (2 * s) % (idx.size() - 1), 2);
    auto stats = pretrain_step(ds, batch, st, cfg, context(1000 + s, 0.0, 0.0));
    for (std::size_t k = 0; k < 3; ++k) {
      double dot = 0.0;
      for (std::size_t p = 0; p < stats.policy_grads.size(); ++p)
        for (std::size_t i = 0; i < stats.policy_grads[p].numel(); ++i) dot += stats.policy_grads[p][i] * dirs[k][p][i];
      proj[k].push_back(dot);
    }
  }
  for (const auto& v : proj) {
    double m = 0.0, ss = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(steps);
    for (double x : v) ss += (x - m) * (x - m);
    const double se = std::sqrt(ss / static_cast<double>(steps - 1) / static_cast<double>(steps));
    EXPECT_GT(se, 0.0);
    EXPECT_LE(std::abs(m), 3.0 * se);
  }
}

TEST(PretrainStep, DivergenceGuardAborts) {
  Dataset ds = small_dataset();
  TrainConfig cfg = quick_config();
  cfg.divergence_guard = 1e-9;
  TrainState st = make_train_state(RunConfig().classifier_spec(ds), RunConfig().policy_spec(ds), cfg);
  const auto idx = ds.indices(Split::train);
  EXPECT_THROW(pretrain_step(ds, std::span<const std::size_t>(idx.data(), 4), st, cfg, context(0, 0.1, 0.1)),
               DivergenceError);
  EXPECT_THROW(check_divergence(std::nan(""), 1e3, "x"), DivergenceError);
}

TEST(RunPretraining, ZeroEpochsReturnsInitialisation) {
  Dataset ds = small_dataset();
  TrainConfig cfg = quick_config(0);
  auto cspec = RunConfig().classifier_spec(ds);
  auto res = run_pretraining(ds, cspec, RunConfig().policy_spec(ds), cfg);
  ClassifierNet init(cspec, component_seed(cfg.seed, Component::init_classifier));
  EXPECT_TRUE(same_params(res.heated.classifier.parameters(), init.parameters()));
  EXPECT_TRUE(res.state.history.empty());
}

TEST(RunPretraining, HistoryHasOneValRowPerEpochAndIsDeterministic) {
  Dataset ds = small_dataset();
  TrainConfig cfg = quick_config(2);
  auto cspec = RunConfig().classifier_spec(ds);
  auto pspec = RunConfig().policy_spec(ds);
  auto a = run_pretraining(ds, cspec, pspec, cfg);
  auto b = run_pretraining(ds, cspec, pspec, cfg);
  EXPECT_EQ(serialize_checkpoint(a.heated), serialize_checkpoint(b.heated));
  const std::string path = (std::filesystem::temp_directory_path() / "nmask_hist.csv").string();
  write_history_csv(path, a.state.history, Split::val);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kHistoryHeader);
  std::size_t rows = 0;
  while (std::getline(in, line)) rows += !line.empty();
  EXPECT_EQ(rows, 2u);
  std::filesystem::remove(path);
}

TEST(RunPretraining, NeedsSplits) {
  SynthSpec spec;
  spec.samples_per_class = 4;
  Dataset ds = synth_generate(spec);
  EXPECT_THROW(run_pretraining(ds, RunConfig().classifier_spec(ds), RunConfig().policy_spec(ds), quick_config()),
               ConfigError);
}

TEST(Finetune, ZeroLearningRateKeepsWeights) {
  Dataset ds = small_dataset();
  TrainConfig cfg = quick_config(2);
  cfg.lr_classifier = 0.0;
  Checkpoint ck;
  ck.classifier = ClassifierNet(RunConfig().classifier_spec(ds), 17);
  auto r = finetune(ck, ds, cfg);
  EXPECT_TRUE(same_params(r.model.parameters(), ck.classifier.parameters()));
}

TEST(Finetune, ClassCountMismatch) {
  Dataset ds = small_dataset();
  ClassifierSpec spec = RunConfig().classifier_spec(ds);
  spec.num_classes = 5;
  Checkpoint ck;
  ck.classifier = ClassifierNet(spec, 1);
  EXPECT_THROW(finetune(ck, ds, quick_config()), ConfigError);
}

TEST(Finetune, BaselineIsFinetuneFromInitialisation) {
  Dataset ds = small_dataset();
  TrainConfig cfg = quick_config(1);
  auto cspec = RunConfig().classifier_spec(ds);
  Checkpoint ck;
  ck.classifier = ClassifierNet(cspec, component_seed(cfg.seed, Component::init_classifier));
  auto a = finetune(ck, ds, cfg);
  auto b = train_baseline(cspec, ds, cfg);
  EXPECT_TRUE(same_params(a.model.parameters(), b.model.parameters()));
  EXPECT_EQ(a.final_val.report.macro_f1, b.final_val.report.macro_f1);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Seeds, ComponentStreamsDiffer) {
  EXPECT_NE(component_seed(0, Component::init_classifier), component_seed(0, Component::init_policy));
  EXPECT_EQ(component_seed(3, Component::masks), component_seed(3, Component::masks));
  EXPECT_EQ(shuffled({0, 1, 2, 3, 4}, 1, 2), shuffled({0, 1, 2, 3, 4}, 1, 2));
}
