#pragma once

// Noise-mask pretraining and supervised fine-tuning.
//
// One pretraining step: preprocess -> policy_forward -> blend_params ->
// beta_sample (low-resolution mask) -> beta_log_prob of that raw sample ->
// make_full_mask -> apply_mask -> classifier_forward -> per-sample CE.
//
// By default the two networks have separate objectives: the classifier
// descends the mean cross-entropy on masked inputs, the policy descends the
// REINFORCE loss mean_n(R(logP_n) * CE_n) with CE_n held constant. Positive
// CE as the weight lowers the probability of masks that produce high loss.
// `combined_loss` instead backpropagates that single product into both
// networks (CE not detached).

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nmask/checkpoint.hpp"
#include "nmask/data.hpp"
#include "nmask/distributions.hpp"
#include "nmask/mask.hpp"
#include "nmask/metrics.hpp"
#include "nmask/networks.hpp"
#include "nmask/ops.hpp"
#include "nmask/optim.hpp"

namespace nmask {

enum class Reduction { logsumexp, sum_logprob };

inline Reduction parse_reduction(std::string_view s) {
  if (s == "logsumexp") return Reduction::logsumexp;
  if (s == "sum" || s == "sum_logprob") return Reduction::sum_logprob;
  throw ConfigError("unknown reduction '" + std::string(s) + "' (expected logsumexp|sum)");
}

inline const char* to_string(Reduction r) { return r == Reduction::logsumexp ? "logsumexp" : "sum"; }

/// Where pretraining masks come from. `ones` is a debugging identity mask.
enum class MaskMode { policy, gaussian, uniform, pure, none, ones };

inline MaskMode parse_mask_mode(std::string_view s) {
  if (s == "policy") return MaskMode::policy;
  if (s == "gaussian") return MaskMode::gaussian;
  if (s == "uniform") return MaskMode::uniform;
  if (s == "pure") return MaskMode::pure;
  if (s == "none") return MaskMode::none;
  if (s == "ones") return MaskMode::ones;
  throw ConfigError("unknown mask mode '" + std::string(s) + "' (expected policy|gaussian|uniform|pure|none)");
}

inline const char* to_string(MaskMode m) {
  switch (m) {
    case MaskMode::policy: return "policy";
    case MaskMode::gaussian: return "gaussian";
    case MaskMode::uniform: return "uniform";
    case MaskMode::pure: return "pure";
    case MaskMode::none: return "none";
    case MaskMode::ones: return "ones";
  }
  return "?";
}

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 64;
  double lr_classifier = 0.05;
  double lr_policy = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  Schedule schedule_classifier{ScheduleKind::step, 5, 0.1};
  Schedule schedule_policy{ScheduleKind::cosine, 0, 0.0};
  Reduction reduction = Reduction::logsumexp;
  bool combined_loss = false;
  std::uint64_t seed = 0;
  double divergence_guard = 1e3;
  std::size_t patience = 0;  // early stopping on val accuracy; 0 disables
  Augment augment{};
  MaskMode mask = MaskMode::policy;
  MaskConfig mask_cfg{};
  double tau_i = 0.9;
  double tau_d = 0.99;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(lr_classifier >= 0.0) || !(lr_policy >= 0.0)) throw ConfigError("learning rates must be nonnegative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be nonnegative");
    if (!(divergence_guard > 0.0)) throw ConfigError("train.divergence_guard must be positive");
    if (!(tau_i > 0.0 && tau_i < 1.0) || !(tau_d > 0.0 && tau_d < 1.0))
      throw ConfigError("mask.tau_i and mask.tau_d must lie strictly inside (0,1)");
    if (!(augment.flip_prob >= 0.0 && augment.flip_prob <= 1.0)) throw ConfigError("data.flip_prob must lie in [0,1]");
  }
};

// Sub-streams of the root seed.
enum class Component : std::uint64_t { init_classifier = 1, init_policy = 2, shuffle = 3, augment = 4, masks = 5, trials = 6 };

inline Rng component_rng(std::uint64_t seed, Component c) { return Rng(seed).split(static_cast<std::uint64_t>(c)); }
inline std::uint64_t component_seed(std::uint64_t seed, Component c) { return component_rng(seed, c).next(); }

// --- REINFORCE loss ------------------------------------------------------

/// Score-function loss over per-element mask log-densities [N,h,w] and
/// per-sample costs [N]. logsumexp: mean_n(logsumexp_ij logP * CE_n);
/// sum_logprob: mean_n(sum_ij logP * CE_n). With `detach_cost` the costs are
/// constant weights and gradients reach only the log-densities.
inline Tensor reinforce_loss(const Tensor& log_prob_map, const Tensor& ce_per_sample, Reduction reduction,
                             bool detach_cost = true) {
  if (log_prob_map.shape().size() != 3) throw ShapeError("reinforce_loss: log-prob map must be [N,h,w]");
  if (ce_per_sample.shape() != Shape{log_prob_map.dim(0)})
    throw ShapeError("reinforce_loss: " + shape_str(ce_per_sample.shape()) + " costs for " +
                     std::to_string(log_prob_map.dim(0)) + " masks");
  Tensor per_sample = reduction == Reduction::logsumexp ? logsumexp(log_prob_map, {1, 2}) : sum(log_prob_map, {1, 2});
  Tensor cost = detach_cost ? ce_per_sample.detach() : ce_per_sample;
  return mean(mul(per_sample, cost));
}

// --- state ---------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  Split split = Split::train;
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double lr_classifier = 0.0;
  double lr_policy = 0.0;
  double mask_mean = 1.0;
  double mask_std = 0.0;
};

struct TrainState {
  ClassifierNet classifier;
  PolicyNet policy;
  Sgd classifier_opt;
  Sgd policy_opt;
  EmaState ema;
  std::size_t epoch = 0;
  std::vector<EpochRecord> history;

  Checkpoint checkpoint(bool with_optimizer = false) const {
    Checkpoint ck;
    ck.classifier = classifier;
    ck.policy = policy;
    ck.ema = ema;
    ck.epoch = epoch;
    if (with_optimizer) {
      ck.classifier_momentum = classifier_opt.buffers();
      ck.policy_momentum = policy_opt.buffers();
    }
    return ck;
  }
};

inline TrainState make_train_state(const ClassifierSpec& cspec, const PolicySpec& pspec, const TrainConfig& cfg) {
  cfg.validate();
  if (pspec.noise_h != cfg.mask_cfg.noise_h || pspec.noise_w != cfg.mask_cfg.noise_w)
    throw ConfigError("policy noise matrix does not match mask.noise_h/mask.noise_w");
  TrainState s;
  s.classifier = ClassifierNet(cspec, component_seed(cfg.seed, Component::init_classifier));
  s.policy = PolicyNet(pspec, component_seed(cfg.seed, Component::init_policy));
  s.classifier_opt = Sgd(s.classifier.parameters(), cfg.momentum, cfg.weight_decay);
  s.policy_opt = Sgd(s.policy.parameters(), cfg.momentum, cfg.weight_decay);
  s.ema = EmaState::zeros(cfg.mask_cfg.noise_h, cfg.mask_cfg.noise_w, cfg.tau_i, cfg.tau_d);
  return s;
}

// --- batches -------------------------------------------------------------

/// Epoch order of `indices`, fixed by (seed, epoch).
inline std::vector<std::size_t> shuffled(std::vector<std::size_t> indices, std::uint64_t seed, std::size_t epoch) {
  Rng rng = component_rng(seed, Component::shuffle).split(epoch);
  for (std::size_t i = indices.size(); i > 1; --i) std::swap(indices[i - 1], indices[rng.below(i)]);
  return indices;
}

inline std::vector<Array> preprocess_batch(const Dataset& ds, std::span<const std::size_t> batch, const Augment& aug,
                                           Rng* rng) {
  std::vector<Array> out;
  out.reserve(batch.size());
  for (auto i : batch) out.push_back(preprocess(ds.images[i], aug, ds.norm_mean, ds.norm_std, rng));
  return out;
}

inline std::vector<int> batch_labels(const Dataset& ds, std::span<const std::size_t> batch) {
  std::vector<int> y;
  y.reserve(batch.size());
  for (auto i : batch) y.push_back(ds.labels[i]);
  return y;
}

inline void check_divergence(double value, double guard, const std::string& where) {
  if (!std::isfinite(value) || value > guard) {
    std::ostringstream os;
    os << "training diverged at " << where << ": loss " << value << " (ceiling " << guard << ")";
    throw DivergenceError(os.str());
  }
}

// --- steps ---------------------------------------------------------------

/// Plain supervised update on a prepared batch; returns per-sample CE.
inline Array supervised_step(ClassifierNet& net, Sgd& opt, const Tensor& inputs, const std::vector<int>& labels,
                             double lr, double guard, const std::string& where) {
  Tensor ce = cross_entropy(classifier_forward(inputs, net), labels);
  Tensor loss = mean(ce);
  check_divergence(loss.item(), guard, where);
  auto grads = grad(loss, net.parameters());
  opt.step(net.parameters(), grads, lr);
  return ce.value();
}

struct StepStats {
  double mean_ce = 0.0;
  double mean_lse_logp = 0.0;
  double mask_mean = 1.0;
  double mask_std = 0.0;
  double policy_grad_norm = 0.0;
  std::vector<Array> policy_grads;
};

struct StepContext {
  double lr_classifier = 0.0;
  double lr_policy = 0.0;
  Rng augment_rng{0};
  Rng mask_rng{0};
  std::string where = "step";
};

/// Full-resolution masks for a preprocessed batch plus, for the policy, the
/// log-density map of the raw samples. Updates `ema` when `update_ema`.
struct BatchMasks {
  std::vector<Array> full;  // [H,W] each
  std::optional<Tensor> log_prob;  // [N,h,w], policy only
};

inline BatchMasks sample_masks(const Tensor& x, const PolicyNet& policy, EmaState& ema, MaskMode mode,
                               const MaskConfig& mcfg, Rng& rng, bool update_ema) {
  const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  BatchMasks out;
  switch (mode) {
    case MaskMode::policy: {
      auto [a, b] = policy_forward(x, policy);
      BlendedParams bp = blend_params(a, b, ema);
      Array raw = beta_sample(bp.params, rng);
      out.log_prob = beta_log_prob(raw, bp.params);
      const std::size_t hw = mcfg.noise_h * mcfg.noise_w;
      for (std::size_t i = 0; i < n; ++i) {
        Array r(Shape{mcfg.noise_h, mcfg.noise_w},
                std::vector<double>(raw.data().begin() + static_cast<std::ptrdiff_t>(i * hw),
                                    raw.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * hw)));
        out.full.push_back(make_full_mask(r, h, w, mcfg));
      }
      if (update_ema) ema = bp.next;
      break;
    }
    case MaskMode::gaussian:
    case MaskMode::uniform:
      for (std::size_t i = 0; i < n; ++i) {
        Array r = fixed_noise_mask(mode == MaskMode::gaussian ? FixedNoise::gaussian : FixedNoise::uniform,
                                   mcfg.noise_h, mcfg.noise_w, rng);
        out.full.push_back(make_full_mask(r, h, w, mcfg));
      }
      break;
    case MaskMode::pure:
      for (std::size_t i = 0; i < n; ++i) out.full.push_back(fixed_noise_mask(FixedNoise::pure, h, w, rng));
      break;
    case MaskMode::none:
    case MaskMode::ones:
      for (std::size_t i = 0; i < n; ++i) out.full.emplace_back(Shape{h, w}, 1.0);
      break;
  }
  return out;
}

/// Full masks for dataset images under evaluation preprocessing; the EMA
/// state is read but never updated.
inline std::vector<Array> eval_masks(const PolicyNet& policy, const EmaState& ema, const Dataset& ds,
                                     std::span<const std::size_t> idx, MaskMode mode, const MaskConfig& mcfg,
                                     Rng rng, std::size_t batch_size = 128) {
  std::vector<Array> out;
  EmaState frozen = ema;
  for (std::size_t s = 0; s < idx.size(); s += batch_size) {
    auto b = idx.subspan(s, std::min(batch_size, idx.size() - s));
    Tensor x = stack_images(preprocess_batch(ds, b, {}, nullptr));
    auto m = sample_masks(x, policy, frozen, mode, mcfg, rng, false);
    for (auto& a : m.full) out.push_back(std::move(a));
  }
  return out;
}

/// One pretraining step on `batch` (dataset indices).
inline StepStats pretrain_step(const Dataset& ds, std::span<const std::size_t> batch, TrainState& state,
                               const TrainConfig& cfg, StepContext ctx) {
  if (batch.empty()) throw ContractError("pretrain_step: empty batch");
  auto pre = preprocess_batch(ds, batch, cfg.augment, &ctx.augment_rng);
  const auto labels = batch_labels(ds, batch);
  Tensor x = stack_images(pre);

  BatchMasks masks = sample_masks(x, state.policy, state.ema, cfg.mask, cfg.mask_cfg, ctx.mask_rng, true);
  std::vector<Array> masked;
  masked.reserve(pre.size());
  double msum = 0.0, msq = 0.0, mcount = 0.0;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    masked.push_back(apply_mask(pre[i], masks.full[i]));
    for (double v : masks.full[i].data()) {
      msum += v;
      msq += v * v;
      mcount += 1.0;
    }
  }
  Tensor xm = stack_images(masked);

  StepStats st;
  st.mask_mean = msum / mcount;
  st.mask_std = std::sqrt(std::max(msq / mcount - st.mask_mean * st.mask_mean, 0.0));

  const bool use_policy = cfg.mask == MaskMode::policy;
  if (use_policy) {
    Tensor lse = logsumexp(*masks.log_prob, {1, 2});
    for (double v : lse.value().data()) st.mean_lse_logp += v;
    st.mean_lse_logp /= static_cast<double>(batch.size());
  }

  if (!use_policy || !cfg.combined_loss) {
    const Array ce = supervised_step(state.classifier, state.classifier_opt, xm, labels, ctx.lr_classifier,
                                     cfg.divergence_guard, ctx.where);
    for (double v : ce.data()) st.mean_ce += v;
    st.mean_ce /= static_cast<double>(batch.size());
    if (use_policy) {
      Tensor ploss = reinforce_loss(*masks.log_prob, Tensor(ce), cfg.reduction);
      check_divergence(std::abs(ploss.item()), std::numeric_limits<double>::max(), ctx.where + " (policy loss)");
      st.policy_grads = grad(ploss, state.policy.parameters());
    }
  } else {
    Tensor ce = cross_entropy(classifier_forward(xm, state.classifier), labels);
    st.mean_ce = mean(ce).item();
    check_divergence(st.mean_ce, cfg.divergence_guard, ctx.where);
    Tensor loss = reinforce_loss(*masks.log_prob, ce, cfg.reduction, false);
    check_divergence(std::abs(loss.item()), std::numeric_limits<double>::max(), ctx.where + " (combined loss)");
    std::vector<Tensor> all = state.classifier.parameters();
    all.insert(all.end(), state.policy.parameters().begin(), state.policy.parameters().end());
    auto grads = grad(loss, all);
    const std::size_t nc = state.classifier.parameters().size();
    std::vector<Array> gc(grads.begin(), grads.begin() + static_cast<std::ptrdiff_t>(nc));
    st.policy_grads.assign(grads.begin() + static_cast<std::ptrdiff_t>(nc), grads.end());
    state.classifier_opt.step(state.classifier.parameters(), gc, ctx.lr_classifier);
  }

  if (use_policy) {
    double sq = 0.0;
    for (const auto& g : st.policy_grads)
      for (double v : g.data()) sq += v * v;
    st.policy_grad_norm = std::sqrt(sq);
    state.policy_opt.step(state.policy.parameters(), st.policy_grads, ctx.lr_policy);
  }
  return st;
}

// --- evaluation ----------------------------------------------------------

struct EvalResult {
  double loss = 0.0;
  Array scores;  // logits [N,C]
  std::vector<int> labels;
  MetricsReport report;
};

/// Unmasked evaluation (normalisation-only preprocessing).
inline EvalResult evaluate_classifier(const ClassifierNet& net, const Dataset& ds, std::span<const std::size_t> idx,
                                      std::size_t batch_size = 128) {
  if (idx.empty()) throw ConfigError("evaluation split is empty");
  const std::size_t c = net.spec().num_classes;
  EvalResult r;
  r.scores = Array(Shape{idx.size(), c});
  double total = 0.0;
  for (std::size_t s = 0; s < idx.size(); s += batch_size) {
    auto b = idx.subspan(s, std::min(batch_size, idx.size() - s));
    auto pre = preprocess_batch(ds, b, {}, nullptr);
    auto y = batch_labels(ds, b);
    Tensor logits = classifier_forward(stack_images(pre), net);
    Tensor ce = cross_entropy(logits, y);
    for (double v : ce.value().data()) total += v;
    std::copy(logits.value().data().begin(), logits.value().data().end(),
              r.scores.data().begin() + static_cast<std::ptrdiff_t>(s * c));
    r.labels.insert(r.labels.end(), y.begin(), y.end());
  }
  r.loss = total / static_cast<double>(idx.size());
  r.report = compute_metrics(r.scores, r.labels);
  return r;
}

// --- loops ---------------------------------------------------------------

struct PretrainResult {
  TrainState state;    // final epoch: the heated model
  Checkpoint heated;
  Checkpoint best;     // best validation accuracy
  double best_val_accuracy = -1.0;
};

/// Pretraining loop: each epoch runs pretrain_step over shuffled train
/// batches, then validates the classifier without masks.
inline PretrainResult run_pretraining(const Dataset& ds, const ClassifierSpec& cspec, const PolicySpec& pspec,
                                      const TrainConfig& cfg,
                                      const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (ds.split.empty()) throw ConfigError("pretraining needs a split dataset");
  if (cspec.num_classes != ds.num_classes) throw ConfigError("model.num_classes does not match dataset");
  const auto train_idx = ds.indices(Split::train);
  const auto val_idx = ds.indices(Split::val);
  if (train_idx.empty() || val_idx.empty()) throw ConfigError("pretraining needs nonempty train and val splits");

  PretrainResult res{make_train_state(cspec, pspec, cfg), {}, {}, -1.0};
  TrainState& st = res.state;
  res.best = st.checkpoint();
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    st.epoch = epoch;
    const double lr_c = lr_schedule(cfg.schedule_classifier, epoch, cfg.epochs, cfg.lr_classifier);
    const double lr_p = lr_schedule(cfg.schedule_policy, epoch, cfg.epochs, cfg.lr_policy);
    const auto order = shuffled(train_idx, cfg.seed, epoch);
    double ce_sum = 0.0, mmean = 0.0, mstd = 0.0;
    std::size_t seen = 0, batches = 0;
    for (std::size_t s = 0, b = 0; s < order.size(); s += cfg.batch_size, ++b) {
      std::span<const std::size_t> batch(order.data() + s, std::min(cfg.batch_size, order.size() - s));
      StepContext ctx{lr_c, lr_p, component_rng(cfg.seed, Component::augment).split(epoch, b),
                      component_rng(cfg.seed, Component::masks).split(epoch, b),
                      "epoch " + std::to_string(epoch) + " batch " + std::to_string(b)};
      auto stats = pretrain_step(ds, batch, st, cfg, std::move(ctx));
      ce_sum += stats.mean_ce * static_cast<double>(batch.size());
      seen += batch.size();
      mmean += stats.mask_mean;
      mstd += stats.mask_std;
      ++batches;
    }
    EpochRecord tr{epoch, Split::train, ce_sum / static_cast<double>(seen), 0.0, 0.0, lr_c, lr_p,
                   mmean / static_cast<double>(batches), mstd / static_cast<double>(batches)};
    const auto val = evaluate_classifier(st.classifier, ds, val_idx);
    EpochRecord vr{epoch, Split::val, val.loss, val.report.accuracy, val.report.macro_f1, lr_c, lr_p,
                   tr.mask_mean, tr.mask_std};
    st.history.push_back(tr);
    st.history.push_back(vr);
    if (on_epoch) on_epoch(vr);
    st.epoch = epoch + 1;
    if (val.report.accuracy > res.best_val_accuracy) {
      res.best_val_accuracy = val.report.accuracy;
      res.best = st.checkpoint();
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  res.heated = st.checkpoint();
  return res;
}

struct SupervisedResult {
  ClassifierNet model;
  std::vector<EpochRecord> history;
  EvalResult final_val;
};

/// Plain supervised training (no masks, no policy) from `start`. Serves both
/// random-init baselines and fine-tuning of a heated model.
inline SupervisedResult train_supervised(ClassifierNet start, const Dataset& ds, const TrainConfig& cfg,
                                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (ds.split.empty()) throw ConfigError("training needs a split dataset");
  if (start.spec().num_classes != ds.num_classes)
    throw ConfigError("class-count mismatch: model has " + std::to_string(start.spec().num_classes) +
                      " classes, dataset has " + std::to_string(ds.num_classes));
  const auto train_idx = ds.indices(Split::train);
  const auto val_idx = ds.indices(Split::val);
  if (train_idx.empty() || val_idx.empty()) throw ConfigError("training needs nonempty train and val splits");

  SupervisedResult res{std::move(start), {}, {}};
  Sgd opt(res.model.parameters(), cfg.momentum, cfg.weight_decay);
  double best_acc = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_c = lr_schedule(cfg.schedule_classifier, epoch, cfg.epochs, cfg.lr_classifier);
    const auto order = shuffled(train_idx, cfg.seed, epoch);
    double ce_sum = 0.0;
    for (std::size_t s = 0, b = 0; s < order.size(); s += cfg.batch_size, ++b) {
      std::span<const std::size_t> batch(order.data() + s, std::min(cfg.batch_size, order.size() - s));
      Rng aug = component_rng(cfg.seed, Component::augment).split(epoch, b);
      auto pre = preprocess_batch(ds, batch, cfg.augment, &aug);
      const Array ce = supervised_step(res.model, opt, stack_images(pre), batch_labels(ds, batch), lr_c,
                                       cfg.divergence_guard,
                                       "epoch " + std::to_string(epoch) + " batch " + std::to_string(b));
      for (double v : ce.data()) ce_sum += v;
    }
    EpochRecord tr{epoch, Split::train, ce_sum / static_cast<double>(order.size()), 0.0, 0.0, lr_c, 0.0, 1.0, 0.0};
    res.final_val = evaluate_classifier(res.model, ds, val_idx);
    EpochRecord vr{epoch, Split::val, res.final_val.loss, res.final_val.report.accuracy,
                   res.final_val.report.macro_f1, lr_c, 0.0, 1.0, 0.0};
    res.history.push_back(tr);
    res.history.push_back(vr);
    if (on_epoch) on_epoch(vr);
    if (res.final_val.report.accuracy > best_acc) {
      best_acc = res.final_val.report.accuracy;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  if (cfg.epochs == 0) res.final_val = evaluate_classifier(res.model, ds, val_idx);
  return res;
}

/// Fine-tune the classifier of a (heated) checkpoint; the policy is dropped.
inline SupervisedResult finetune(const Checkpoint& init, const Dataset& ds, const TrainConfig& cfg,
                                 const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  return train_supervised(init.classifier, ds, cfg, on_epoch);
}

/// Random-init baseline: same loop and seeds as finetune, classifier
/// initialised exactly as pretraining initialises it.
inline SupervisedResult train_baseline(const ClassifierSpec& cspec, const Dataset& ds, const TrainConfig& cfg,
                                       const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  return train_supervised(ClassifierNet(cspec, component_seed(cfg.seed, Component::init_classifier)), ds, cfg,
                          on_epoch);
}

// --- reports -------------------------------------------------------------

inline constexpr const char* kHistoryHeader =
    "epoch,split,loss,accuracy,macro_f1,lr_classifier,lr_policy,mask_mean,mask_std";

/// Writes the records of one split (one row per epoch).
inline void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history, Split split) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << kHistoryHeader << '\n' << std::setprecision(17);
  for (const auto& r : history)
    if (r.split == split)
      out << r.epoch << ',' << to_string(r.split) << ',' << r.loss << ',' << r.accuracy << ',' << r.macro_f1 << ','
          << r.lr_classifier << ',' << r.lr_policy << ',' << r.mask_mean << ',' << r.mask_std << '\n';
}

inline void write_metrics_csv(const std::string& path, const MetricsReport& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << std::setprecision(17);
  out << "metric,value\n"
      << "macro_precision," << r.macro_precision << '\n'
      << "macro_recall," << r.macro_recall << '\n'
      << "macro_f1," << r.macro_f1 << '\n'
      << "auroc_macro_ovr," << (r.auroc_defined ? std::to_string(r.auroc_macro_ovr) : std::string("undefined")) << '\n'
      << "balanced_accuracy," << r.balanced_accuracy << '\n'
      << "accuracy," << r.accuracy << '\n';
  out << "\nclass,precision,recall,f1,auroc,support\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    out << k << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ',';
    if (std::isnan(m.auroc)) out << "undefined";
    else out << m.auroc;
    out << ',' << m.support << '\n';
  }
}

}  // namespace nmask
