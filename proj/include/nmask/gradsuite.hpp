#pragma once

// Finite-difference suite over every differentiable op and the policy /
// classifier composites. Each case runs for a number of seeds; the entry
// keeps the worst relative error seen.

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nmask/distributions.hpp"
#include "nmask/gradcheck.hpp"
#include "nmask/networks.hpp"
#include "nmask/ops.hpp"
#include "nmask/training.hpp"

namespace nmask {

struct GradSuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t seeds = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

namespace detail {

inline Array random_array(Shape s, Rng& rng, double lo, double hi) {
  Array a(std::move(s));
  for (auto& v : a.vec()) v = lo + (hi - lo) * rng.uniform();
  return a;
}

inline Array normal_array(Shape s, Rng& rng, double sd = 1.0) {
  Array a(std::move(s));
  for (auto& v : a.vec()) v = sd * rng.normal();
  return a;
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// Weighted sum so every output element gets a distinct upstream gradient.
inline Tensor probe_sum(const Tensor& t, const Array& w) { return sum(mul(t, Tensor(w))); }

using GradCase = std::function<GradCheckResult(Rng&)>;

// Hash of the relu on/off pattern of a conv stack: the smooth piece of the
// network function that (params, x) lies in.
inline std::uint64_t relu_pattern(const ConvStackSpec& spec, std::span<const Tensor> params, const Tensor& x) {
  std::uint64_t hsh = 1469598103934665603ull;
  Tensor h = x.detach();
  for (std::size_t b = 0; b < spec.widths.size(); ++b) {
    Tensor z = add_channel_bias(conv2d(h, params[2 * b].detach(), spec.strides[b], 1), params[2 * b + 1].detach());
    for (double v : z.value().data()) hsh = (hsh ^ (v > 0.0 ? 1u : 0u)) * 1099511628211ull;
    h = relu(z);
  }
  return hsh;
}

inline std::vector<std::pair<std::string, GradCase>> grad_cases() {
  std::vector<std::pair<std::string, GradCase>> cases;

  cases.emplace_back("elementwise", [](Rng& rng) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
    const Array w = normal_array(s, rng);
    return gradcheck(
        [&](const std::vector<Tensor>& p) {
          Tensor t = add(mul(exp(scale(p[0], 0.3)), p[1]), log(p[2]));
          t = add(t, mul(relu(sub(p[0], p[1])), add_scalar(p[1], 1.0)));
          return probe_sum(neg(t), w);
        },
        {normal_array(s, rng), normal_array(s, rng), random_array(s, rng, 0.5, 2.0)});
  });

  cases.emplace_back("reductions", [](Rng& rng) {
    const std::size_t a = pick(rng, 1, 3), b = pick(rng, 2, 4), c = pick(rng, 1, 4);
    const Array w1 = normal_array(Shape{a, c}, rng), w2 = normal_array(Shape{b}, rng);
    return gradcheck(
        [&](const std::vector<Tensor>& p) {
          Tensor x = p[0];
          Tensor r = reshape(x, Shape{a * b, c});
          return add(add(probe_sum(logsumexp(x, {1}), w1), probe_sum(mean(x, {0, 2}), w2)),
                     add(sum(mul(r, r)), add(logsumexp(x), mean(x))));
        },
        {normal_array(Shape{a, b, c}, rng, 2.0)});
  });

  cases.emplace_back("matmul_bias", [](Rng& rng) {
    const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 5), n = pick(rng, 1, 5);
    const Array w = normal_array(Shape{m, n}, rng);
    return gradcheck([&](const std::vector<Tensor>& p) { return probe_sum(add_row_bias(matmul(p[0], p[1]), p[2]), w); },
                     {normal_array(Shape{m, k}, rng), normal_array(Shape{k, n}, rng), normal_array(Shape{n}, rng)});
  });

  cases.emplace_back("conv2d", [](Rng& rng) {
    const std::size_t stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const auto g = conv2d_geometry(Shape{1, 2, 5, 5}, Shape{3, 2, 3, 3}, stride, pad);
    const Array w = normal_array(Shape{g.n, g.f, g.oh, g.ow}, rng);
    return gradcheck(
        [&](const std::vector<Tensor>& p) { return probe_sum(add_channel_bias(conv2d(p[0], p[1], stride, pad), p[2]), w); },
        {normal_array(Shape{1, 2, 5, 5}, rng), normal_array(Shape{3, 2, 3, 3}, rng), normal_array(Shape{3}, rng)});
  });

  cases.emplace_back("lgamma", [](Rng& rng) {
    const Shape s{pick(rng, 1, 4), pick(rng, 1, 4)};
    const Array w = normal_array(s, rng);
    return gradcheck([&](const std::vector<Tensor>& p) { return probe_sum(lgamma(p[0]), w); },
                     {random_array(s, rng, 0.2, 8.0)});
  });

  cases.emplace_back("cross_entropy", [](Rng& rng) {
    const std::size_t n = pick(rng, 1, 4), c = pick(rng, 2, 6);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(c));
    const Array w = random_array(Shape{n}, rng, 0.5, 1.5);
    return gradcheck([&](const std::vector<Tensor>& p) { return probe_sum(cross_entropy(p[0], y), w); },
                     {normal_array(Shape{n, c}, rng, 2.0)});
  });

  cases.emplace_back("beta_log_prob", [](Rng& rng) {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 4)};
    const Array x = random_array(s, rng, 0.02, 0.98);
    const Array w = normal_array(s, rng);
    return gradcheck(
        [&](const std::vector<Tensor>& p) { return probe_sum(beta_log_prob(x, BetaParams{p[0], p[1]}), w); },
        {random_array(s, rng, 0.5, 5.0), random_array(s, rng, 0.5, 5.0)});
  });

  // Policy -> blend -> exp -> log-density -> REINFORCE loss, both reductions.
  cases.emplace_back("policy_composite", [](Rng& rng) {
    PolicySpec spec{{1, 12, 12, {3, 4}, {2, 2}}, 3, 3, false};
    PolicyNet net(spec, rng.next());
    const Tensor x(normal_array(Shape{2, 1, 12, 12}, rng));
    EmaState ema = EmaState::zeros(3, 3);
    ema.alpha_dataset = normal_array(Shape{3, 3}, rng, 0.3);
    ema.beta_dataset = normal_array(Shape{3, 3}, rng, 0.3);
    const Array raw = random_array(Shape{2, 3, 3}, rng, 0.05, 0.95);
    const Tensor ce(random_array(Shape{2}, rng, 0.5, 2.5));
    const Reduction red = rng.below(2) ? Reduction::logsumexp : Reduction::sum_logprob;
    std::vector<Array> init;
    for (const auto& p : net.parameters()) init.push_back(p.value());
    return gradcheck(
        [&](const std::vector<Tensor>& p) {
          PolicyNet local = net;
          local.parameters() = p;
          auto [a, b] = policy_forward(x, local);
          auto bp = blend_params(a, b, ema);
          return reinforce_loss(beta_log_prob(raw, bp.params), ce, red);
        },
        init, 1e-5, 1e-4, 0, [&](const std::vector<Tensor>& p) {
          return relu_pattern(spec.body, std::span<const Tensor>(p).first(p.size() - 4), x);
        });
  });

  cases.emplace_back("classifier_composite", [](Rng& rng) {
    ClassifierSpec spec{{1, 12, 12, {3, 4, 5}, {1, 2, 2}}, 4};
    ClassifierNet net(spec, rng.next());
    const Array x = normal_array(Shape{2, 1, 12, 12}, rng);
    std::vector<int> y{static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4))};
    std::vector<Array> init{x};
    for (const auto& p : net.parameters()) init.push_back(p.value());
    return gradcheck(
        [&](const std::vector<Tensor>& p) {
          ClassifierNet local = net;
          local.parameters().assign(p.begin() + 1, p.end());
          return mean(cross_entropy(classifier_forward(p[0], local), y));
        },
        init, 1e-5, 1e-4, 0, [&](const std::vector<Tensor>& p) {
          return relu_pattern(spec.body, std::span<const Tensor>(p).subspan(1, p.size() - 3), p[0]);
        });
  });

  // Default-size networks on 2x1x28x28 inputs, sampled coordinates.
  cases.emplace_back("classifier_default", [](Rng& rng) {
    const ClassifierSpec spec;
    ClassifierNet net(spec, rng.next());
    const Array x = random_array(Shape{2, 1, 28, 28}, rng, -1.0, 2.0);
    std::vector<int> y{static_cast<int>(rng.below(12)), static_cast<int>(rng.below(12))};
    std::vector<Array> init{x};
    for (const auto& p : net.parameters()) init.push_back(p.value());
    return gradcheck(
        [&](const std::vector<Tensor>& p) {
          ClassifierNet local = net;
          local.parameters().assign(p.begin() + 1, p.end());
          return mean(cross_entropy(classifier_forward(p[0], local), y));
        },
        init, 1e-5, 1e-4, 16, [&](const std::vector<Tensor>& p) {
          return relu_pattern(spec.body, std::span<const Tensor>(p).subspan(1, p.size() - 3), p[0]);
        });
  });

  cases.emplace_back("policy_default", [](Rng& rng) {
    PolicySpec spec;
    spec.zero_head = false;
    PolicyNet net(spec, rng.next());
    const Tensor x(random_array(Shape{2, 1, 28, 28}, rng, -1.0, 2.0));
    const Array w1 = normal_array(Shape{2, 8, 8}, rng), w2 = normal_array(Shape{2, 8, 8}, rng);
    std::vector<Array> init;
    for (const auto& p : net.parameters()) init.push_back(p.value());
    return gradcheck(
        [&](const std::vector<Tensor>& p) {
          PolicyNet local = net;
          local.parameters() = p;
          auto [a, b] = policy_forward(x, local);
          return add(probe_sum(a, w1), probe_sum(b, w2));
        },
        init, 1e-5, 1e-4, 16, [&](const std::vector<Tensor>& p) {
          return relu_pattern(spec.body, std::span<const Tensor>(p).first(p.size() - 4), x);
        });
  });

  return cases;
}

}  // namespace detail

inline std::vector<std::string> grad_suite_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : detail::grad_cases()) out.push_back(name);
  return out;
}

/// Runs every case for `seeds` seeds derived from `base_seed`.
inline std::vector<GradSuiteEntry> run_grad_suite(std::size_t seeds = 20, std::uint64_t base_seed = 0) {
  std::vector<GradSuiteEntry> out;
  const Rng root(base_seed);
  std::uint64_t case_index = 0;
  for (const auto& [name, fn] : detail::grad_cases()) {
    GradSuiteEntry e{name, 0.0, seeds, 0, 0};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng = root.split(case_index, s);
      const auto r = fn(rng);
      e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
      e.checked += r.checked;
      e.skipped += r.skipped;
    }
    out.push_back(e);
    ++case_index;
  }
  return out;
}

}  // namespace nmask
