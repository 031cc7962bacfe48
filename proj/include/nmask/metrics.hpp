#pragma once

// Classification metrics: per-class precision/recall/F1 from argmax
// predictions, macro averages, balanced accuracy and one-vs-rest AUROC with
// midrank tie handling.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nmask/error.hpp"
#include "nmask/tensor.hpp"

namespace nmask {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auroc = std::numeric_limits<double>::quiet_NaN();
  std::size_t support = 0;
};

struct MetricsReport {
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double auroc_macro_ovr = std::numeric_limits<double>::quiet_NaN();
  double balanced_accuracy = 0.0;
  double accuracy = 0.0;
  bool auroc_defined = false;
  std::vector<ClassMetrics> per_class;
  std::vector<std::string> warnings;
};

inline std::vector<int> argmax_rows(const Array& scores) {
  if (scores.rank() != 2) throw ShapeError("argmax_rows: expected [N,C]");
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (scores[i * c + j] > scores[i * c + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

/// Midrank AUROC of `scores` for binary `positive` flags; NaN if either class is empty.
inline double auroc_midrank(std::span<const double> scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (positive[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// Metrics from a score matrix [N,C] (argmax feeds the confusion matrix,
/// raw scores feed AUROC). Zero-support classes are left out of the macros.
inline MetricsReport compute_metrics(const Array& scores, std::span<const int> labels) {
  if (scores.rank() != 2) throw ShapeError("compute_metrics: scores must be [N,C]");
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  if (n == 0) throw ContractError("compute_metrics: no samples");
  if (labels.size() != n) throw ShapeError("compute_metrics: label count mismatch");
  for (double v : scores.data())
    if (!std::isfinite(v)) throw DomainError("compute_metrics: non-finite score");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw IndexError("compute_metrics: label out of range");

  const auto pred = argmax_rows(scores);
  std::vector<std::size_t> tp(c, 0), predicted(c, 0), support(c, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    const auto p = static_cast<std::size_t>(pred[i]);
    ++support[y];
    ++predicted[p];
    if (y == p) {
      ++tp[y];
      ++correct;
    }
  }

  MetricsReport r;
  r.per_class.resize(c);
  std::size_t present = 0;
  double sp = 0.0, sr = 0.0, sf = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    auto& m = r.per_class[k];
    m.support = support[k];
    m.precision = predicted[k] ? static_cast<double>(tp[k]) / static_cast<double>(predicted[k]) : 0.0;
    m.recall = support[k] ? static_cast<double>(tp[k]) / static_cast<double>(support[k]) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    if (support[k] == 0) {
      r.warnings.push_back("class " + std::to_string(k) + " has zero support; excluded from macro averages");
      continue;
    }
    ++present;
    sp += m.precision;
    sr += m.recall;
    sf += m.f1;
  }
  const auto denom = static_cast<double>(present);
  r.macro_precision = sp / denom;
  r.macro_recall = sr / denom;
  r.macro_f1 = sf / denom;
  r.balanced_accuracy = r.macro_recall;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  std::vector<double> col(n);
  std::vector<bool> positive(n);
  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores[i * c + k];
      positive[i] = static_cast<std::size_t>(labels[i]) == k;
    }
    const double a = auroc_midrank(col, positive);
    r.per_class[k].auroc = a;
    if (!std::isnan(a)) {
      auc_sum += a;
      ++auc_count;
    }
  }
  if (auc_count > 0) {
    r.auroc_defined = true;
    r.auroc_macro_ovr = auc_sum / static_cast<double>(auc_count);
  } else {
    r.warnings.push_back("AUROC undefined: labels contain a single class");
  }
  return r;
}

inline MetricsReport compute_metrics(const Array& scores, const std::vector<int>& labels) {
  return compute_metrics(scores, std::span<const int>(labels));
}

}  // namespace nmask
