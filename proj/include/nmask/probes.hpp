#pragma once

// Frozen-feature evaluation: feature extraction, an MLP probe for
// unseen-concept transfer, and logistic-regression low-shot curves with
// t-distribution confidence intervals.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "nmask/data.hpp"
#include "nmask/metrics.hpp"
#include "nmask/networks.hpp"
#include "nmask/ops.hpp"
#include "nmask/optim.hpp"

namespace nmask {

// --- statistics ----------------------------------------------------------

/// Two-sided 95% Student-t quantile t_{0.975, dof}.
inline double t_quantile_975(std::size_t dof) {
  if (dof == 0) throw ContractError("t quantile: dof must be positive");
  return boost::math::quantile(boost::math::students_t(static_cast<double>(dof)), 0.975);
}

struct MeanCi {
  double mean = 0.0;
  double half_width = std::numeric_limits<double>::quiet_NaN();  // undefined below 2 samples
  std::size_t n = 0;
};

/// Mean and 95% t half-width (sample sd, dof = n-1).
inline MeanCi mean_ci(std::span<const double> xs) {
  MeanCi r;
  r.n = xs.size();
  if (xs.empty()) return r;
  r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  r.half_width = t_quantile_975(xs.size() - 1) * sd / std::sqrt(static_cast<double>(xs.size()));
  return r;
}

/// Midranks (1-based) with ties averaged.
inline std::vector<double> midranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return rank;
}

/// Spearman rank correlation; NaN when either side is constant.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ContractError("spearman: need two equal-length samples");
  const auto ra = midranks(a), rb = midranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

// --- features ------------------------------------------------------------

/// Penultimate (post-pool) activations under evaluation preprocessing: [N,D].
inline Array extract_features(const ClassifierNet& net, const Dataset& ds, std::span<const std::size_t> idx,
                              std::size_t batch_size = 128) {
  const std::size_t d = net.feature_dim();
  Array out(Shape{idx.size(), d});
  for (std::size_t s = 0; s < idx.size(); s += batch_size) {
    const std::size_t m = std::min(batch_size, idx.size() - s);
    std::vector<Array> pre;
    for (std::size_t k = 0; k < m; ++k)
      pre.push_back(preprocess(ds.images[idx[s + k]], {}, ds.norm_mean, ds.norm_std, nullptr));
    Tensor f = net.features(stack_images(pre));
    std::copy(f.value().data().begin(), f.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(s * d));
  }
  return out;
}

inline Array extract_features(const ClassifierNet& net, const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return extract_features(net, ds, all);
}

/// Rows of `x` selected by `idx`.
inline Array take_rows(const Array& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.dim(1);
  Array out(Shape{idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  return out;
}

/// Per-column standardisation fitted on `fit`, applied to all of `x` in place.
inline void standardize(Array& x, std::span<const std::size_t> fit) {
  const std::size_t d = x.dim(1);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0, ss = 0.0;
    for (auto i : fit) m += x[i * d + j];
    m /= static_cast<double>(fit.size());
    for (auto i : fit) ss += (x[i * d + j] - m) * (x[i * d + j] - m);
    const double sd = std::sqrt(ss / static_cast<double>(fit.size()));
    const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
    for (std::size_t i = 0; i < x.dim(0); ++i) x[i * d + j] = (x[i * d + j] - m) * inv;
  }
}

// --- MLP probe -----------------------------------------------------------

struct ProbeConfig {
  std::size_t hidden = 256;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  std::size_t batch_size = 64;
  std::size_t patience = 5;
  std::size_t max_epochs = 200;
  std::size_t trials = 0;  // 0: 7 / 3 / 1 by training-set size
};

/// 7 trials below 2,000 training samples, 3 below 20,000, otherwise 1.
inline std::size_t default_trials(std::size_t n_train) { return n_train < 2000 ? 7 : n_train < 20000 ? 3 : 1; }

struct ProbeResult {
  std::vector<MetricsReport> trials;
  MeanCi macro_f1;
  MeanCi accuracy;
  MeanCi auroc;
};

namespace detail {

inline std::vector<int> labels_of(std::span<const int> labels, std::span<const std::size_t> idx) {
  std::vector<int> y;
  y.reserve(idx.size());
  for (auto i : idx) y.push_back(labels[i]);
  return y;
}

inline std::size_t distinct(std::span<const int> y) {
  std::vector<int> v(y.begin(), y.end());
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

/// One-hidden-layer relu MLP on frozen features. Early stopping on
/// validation accuracy, then loss (train split when there is no val split); the best
/// epoch's weights score the test split. Returns test scores [N_test, C].
inline Array mlp_probe_scores(const Array& features, std::span<const int> labels, std::span<const Split> splits,
                              std::size_t num_classes, Rng rng, const ProbeConfig& cfg) {
  std::vector<std::size_t> tr, va, te;
  for (std::size_t i = 0; i < splits.size(); ++i)
    (splits[i] == Split::train ? tr : splits[i] == Split::val ? va : te).push_back(i);
  if (tr.empty() || te.empty()) throw ConfigError("probe: train and test splits are required");
  if (detail::distinct(detail::labels_of(labels, tr)) < 2) throw ConfigError("probe: training split has a single class");

  Array x = features;
  standardize(x, tr);
  const std::size_t d = x.dim(1);
  std::vector<Tensor> params{
      Tensor::parameter(detail::kaiming_uniform(Shape{d, cfg.hidden}, d, rng)),
      Tensor::parameter(Array(Shape{cfg.hidden})),
      Tensor::parameter(detail::kaiming_uniform(Shape{cfg.hidden, num_classes}, cfg.hidden, rng)),
      Tensor::parameter(Array(Shape{num_classes}))};
  auto forward = [&](const Array& xb) {
    Tensor h = relu(add_row_bias(matmul(Tensor(xb), params[0]), params[1]));
    return add_row_bias(matmul(h, params[2]), params[3]);
  };
  auto score = [&](std::span<const std::size_t> idx) { return forward(take_rows(x, idx)).value(); };
  const auto& monitor = va.empty() ? tr : va;
  const auto monitor_y = detail::labels_of(labels, monitor);

  AdamW opt(params, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
  std::vector<Array> best;
  for (const auto& p : params) best.push_back(p.value());
  double best_acc = -1.0, best_loss = std::numeric_limits<double>::infinity();
  std::size_t since = 0;
  std::vector<std::size_t> order = tr;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::span<const std::size_t> b(order.data() + s, std::min(cfg.batch_size, order.size() - s));
      Tensor loss = mean(cross_entropy(forward(take_rows(x, b)), detail::labels_of(labels, b)));
      if (!std::isfinite(loss.item())) throw DivergenceError("probe: non-finite loss");
      opt.step(params, grad(loss, params));
    }
    const Array ms = score(monitor);
    const double acc = compute_metrics(ms, monitor_y).accuracy;
    const double loss = mean(cross_entropy(Tensor(ms), monitor_y)).item();
    // accuracy first, monitor loss breaks ties (e.g. once accuracy saturates)
    if (acc > best_acc || (acc == best_acc && loss < best_loss)) {
      best_acc = acc;
      best_loss = loss;
      for (std::size_t k = 0; k < params.size(); ++k) best[k] = params[k].value();
      since = 0;
    } else if (++since >= cfg.patience) {
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k].mutable_value() = best[k];
  return score(te);
}

inline MetricsReport mlp_probe_trial(const Array& features, std::span<const int> labels, std::span<const Split> splits,
                                     std::size_t num_classes, Rng rng, const ProbeConfig& cfg) {
  std::vector<std::size_t> te;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == Split::test) te.push_back(i);
  return compute_metrics(mlp_probe_scores(features, labels, splits, num_classes, std::move(rng), cfg),
                         detail::labels_of(labels, te));
}

inline ProbeResult mlp_probe(const Array& features, std::span<const int> labels, std::span<const Split> splits,
                             std::size_t num_classes, std::uint64_t seed, const ProbeConfig& cfg = {}) {
  if (features.rank() != 2 || features.dim(0) != labels.size() || labels.size() != splits.size())
    throw ShapeError("probe: features [N,D], labels and splits must agree on N");
  std::size_t n_train = 0;
  for (auto s : splits) n_train += s == Split::train;
  const std::size_t trials = cfg.trials ? cfg.trials : default_trials(n_train);
  ProbeResult r;
  std::vector<double> f1, acc, auc;
  const Rng root(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    r.trials.push_back(mlp_probe_trial(features, labels, splits, num_classes, root.split(t), cfg));
    f1.push_back(r.trials.back().macro_f1);
    acc.push_back(r.trials.back().accuracy);
    if (r.trials.back().auroc_defined) auc.push_back(r.trials.back().auroc_macro_ovr);
  }
  r.macro_f1 = mean_ci(f1);
  r.accuracy = mean_ci(acc);
  r.auroc = mean_ci(auc);
  return r;
}

// --- multinomial logistic regression ---------------------------------------

struct LogRegConfig {
  double l2 = 1.0;    // penalty 0.5 * l2 * ||W||^2 on the summed log-loss; intercepts unpenalised
  double tol = 1e-6;  // max-abs gradient
  std::size_t max_iter = 1000;
  std::size_t memory = 10;
};

struct LogReg {
  std::size_t d = 0, c = 0;
  std::vector<double> theta;  // W [d,c] row-major, then b [c]
  std::size_t iterations = 0;
  bool converged = false;

  Array scores(const Array& x) const {
    Array out(Shape{x.dim(0), c});
    for (std::size_t i = 0; i < x.dim(0); ++i)
      for (std::size_t k = 0; k < c; ++k) {
        double z = theta[d * c + k];
        for (std::size_t j = 0; j < d; ++j) z += x[i * d + j] * theta[j * c + k];
        out[i * c + k] = z;
      }
    return out;
  }
};

namespace detail {

// Objective and gradient of the penalised multinomial log-loss.
inline double logreg_objective(const Array& x, std::span<const int> y, std::size_t c, double l2,
                               const std::vector<double>& th, std::vector<double>& g) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::fill(g.begin(), g.end(), 0.0);
  double f = 0.0;
  std::vector<double> z(c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      z[k] = th[d * c + k];
      for (std::size_t j = 0; j < d; ++j) z[k] += x[i * d + j] * th[j * c + k];
    }
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double& v : z) s += (v = std::exp(v - m));
    f += std::log(s) - std::log(z[static_cast<std::size_t>(y[i])]);
    for (std::size_t k = 0; k < c; ++k) {
      const double r = z[k] / s - (static_cast<std::size_t>(y[i]) == k ? 1.0 : 0.0);
      for (std::size_t j = 0; j < d; ++j) g[j * c + k] += r * x[i * d + j];
      g[d * c + k] += r;
    }
  }
  for (std::size_t p = 0; p < d * c; ++p) {
    f += 0.5 * l2 * th[p] * th[p];
    g[p] += l2 * th[p];
  }
  return f;
}

}  // namespace detail

/// L-BFGS with backtracking Armijo line search.
inline LogReg fit_logreg(const Array& x, std::span<const int> y, std::size_t num_classes, const LogRegConfig& cfg = {}) {
  if (x.rank() != 2 || x.dim(0) != y.size() || y.empty()) throw ShapeError("logreg: features [N,D] and N labels");
  LogReg m;
  m.d = x.dim(1);
  m.c = num_classes;
  const std::size_t p = m.d * m.c + m.c;
  m.theta.assign(p, 0.0);
  std::vector<double> g(p), g_new(p), dir(p), th_new(p);
  double f = detail::logreg_objective(x, y, m.c, cfg.l2, m.theta, g);
  std::vector<std::vector<double>> S, Y;
  std::vector<double> rho;
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  };
  auto max_abs = [](const std::vector<double>& v) {
    double r = 0.0;
    for (double e : v) r = std::max(r, std::abs(e));
    return r;
  };
  for (; m.iterations < cfg.max_iter; ++m.iterations) {
    if (max_abs(g) <= cfg.tol) {
      m.converged = true;
      break;
    }
    // two-loop recursion
    dir = g;
    std::vector<double> a(S.size());
    for (std::size_t k = S.size(); k-- > 0;) {
      a[k] = rho[k] * dot(S[k], dir);
      for (std::size_t i = 0; i < p; ++i) dir[i] -= a[k] * Y[k][i];
    }
    if (!S.empty()) {
      const double gamma = dot(S.back(), Y.back()) / dot(Y.back(), Y.back());
      for (double& v : dir) v *= gamma;
    }
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double b = rho[k] * dot(Y[k], dir);
      for (std::size_t i = 0; i < p; ++i) dir[i] += S[k][i] * (a[k] - b);
    }
    for (double& v : dir) v = -v;
    double slope = dot(g, dir);
    if (slope >= 0.0) {  // not a descent direction: restart from steepest descent
      S.clear();
      Y.clear();
      rho.clear();
      for (std::size_t i = 0; i < p; ++i) dir[i] = -g[i];
      slope = dot(g, dir);
    }
    double step = S.empty() ? std::min(1.0, 1.0 / std::max(max_abs(g), 1e-12)) : 1.0;
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < p; ++i) th_new[i] = m.theta[i] + step * dir[i];
      f_new = detail::logreg_objective(x, y, m.c, cfg.l2, th_new, g_new);
      if (f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    std::vector<double> s(p), yv(p);
    for (std::size_t i = 0; i < p; ++i) {
      s[i] = th_new[i] - m.theta[i];
      yv[i] = g_new[i] - g[i];
    }
    const double sy = dot(s, yv);
    if (sy > 1e-12) {
      S.push_back(std::move(s));
      Y.push_back(std::move(yv));
      rho.push_back(1.0 / sy);
      if (S.size() > cfg.memory) {
        S.erase(S.begin());
        Y.erase(Y.begin());
        rho.erase(rho.begin());
      }
    }
    m.theta.swap(th_new);
    g.swap(g_new);
    f = f_new;
  }
  if (!m.converged && max_abs(g) <= cfg.tol) m.converged = true;
  return m;
}

// --- low-shot curves -------------------------------------------------------

inline const std::vector<std::size_t> kDefaultShots{8, 16, 32, 64, 128, 256};

struct LowShotConfig {
  std::vector<std::size_t> shots = kDefaultShots;
  std::size_t trials = 10;
  LogRegConfig logreg{};
  bool identical_trials = false;  // debug: every trial reuses trial 0's subsample
};

struct LowShotPoint {
  std::size_t shots = 0;
  MeanCi macro_f1;
  MeanCi accuracy;
  std::vector<double> trial_macro_f1;
};

struct LowShotCurve {
  std::vector<LowShotPoint> points;
  std::vector<std::string> warnings;
  double spearman_rho = std::numeric_limits<double>::quiet_NaN();  // shots vs mean macro-F1
};

/// Per (shot, trial): `shot` training samples per class drawn without
/// replacement, logistic regression fit, scored on the whole test split.
inline LowShotCurve lowshot_eval(const Array& features, std::span<const int> labels, std::span<const Split> splits,
                                 std::size_t num_classes, std::uint64_t seed, const LowShotConfig& cfg = {}) {
  if (features.rank() != 2 || features.dim(0) != labels.size() || labels.size() != splits.size())
    throw ShapeError("lowshot: features [N,D], labels and splits must agree on N");
  if (!std::is_sorted(cfg.shots.begin(), cfg.shots.end()) ||
      std::adjacent_find(cfg.shots.begin(), cfg.shots.end()) != cfg.shots.end() ||
      (!cfg.shots.empty() && cfg.shots.front() == 0))
    throw ConfigError("eval.lowshot_shots must be strictly increasing and positive");
  if (cfg.trials == 0) throw ConfigError("eval.lowshot_trials must be positive");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  std::vector<std::size_t> te, tr_all;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == Split::test) te.push_back(i);
    if (splits[i] == Split::train) {
      by_class[static_cast<std::size_t>(labels[i])].push_back(i);
      tr_all.push_back(i);
    }
  }
  if (te.empty()) throw ConfigError("lowshot: empty test split");
  if (tr_all.empty()) throw ConfigError("lowshot: empty train split");

  Array x = features;
  standardize(x, tr_all);
  const Array x_test = take_rows(x, te);
  const auto y_test = detail::labels_of(labels, te);
  std::size_t present = 0;
  for (const auto& c : by_class) present += !c.empty();

  LowShotCurve curve;
  const Rng root(seed);
  for (std::size_t shot : cfg.shots) {
    std::size_t smallest = std::numeric_limits<std::size_t>::max();
    for (const auto& c : by_class)
      if (!c.empty()) smallest = std::min(smallest, c.size());
    if (smallest < shot) {
      curve.warnings.push_back("skipping " + std::to_string(shot) + "-shot: a class has only " +
                               std::to_string(smallest) + " training samples");
      continue;
    }
    LowShotPoint pt;
    pt.shots = shot;
    std::vector<double> accs;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      Rng rng = root.split(shot, cfg.identical_trials ? 0 : t);
      std::vector<std::size_t> pick;
      for (const auto& c : by_class) {
        std::vector<std::size_t> pool = c;
        for (std::size_t k = 0; k < shot && k < pool.size(); ++k) {
          std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
          pick.push_back(pool[k]);
        }
      }
      const auto model = fit_logreg(take_rows(x, pick), detail::labels_of(labels, pick), num_classes, cfg.logreg);
      const auto rep = compute_metrics(model.scores(x_test), y_test);
      pt.trial_macro_f1.push_back(rep.macro_f1);
      accs.push_back(rep.accuracy);
    }
    pt.macro_f1 = mean_ci(pt.trial_macro_f1);
    pt.accuracy = mean_ci(accs);
    curve.points.push_back(std::move(pt));
  }
  if (present < 2) curve.warnings.push_back("fewer than two classes in the train split");
  if (curve.points.size() >= 2) {
    std::vector<double> s, m;
    for (const auto& p : curve.points) {
      s.push_back(static_cast<double>(p.shots));
      m.push_back(p.macro_f1.mean);
    }
    curve.spearman_rho = spearman(s, m);
  }
  return curve;
}

}  // namespace nmask
