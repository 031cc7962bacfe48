#pragma once

// SGD with momentum and coupled weight decay, AdamW, and the step / cosine
// learning-rate schedules.

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "nmask/error.hpp"
#include "nmask/tensor.hpp"

namespace nmask {

/// g <- grad + wd * param; buf <- momentum * buf + g; param <- param - lr * buf
inline void sgd_step(Array& param, const Array& grad, Array& momentum_buf, double lr, double momentum,
                     double weight_decay) {
  if (param.shape() != grad.shape() || param.shape() != momentum_buf.shape())
    throw ShapeError("sgd_step: parameter/gradient/buffer shapes differ");
  for (double g : grad.data())
    if (!std::isfinite(g)) throw DivergenceError("sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i] + weight_decay * param[i];
    momentum_buf[i] = momentum * momentum_buf[i] + g;
    param[i] -= lr * momentum_buf[i];
  }
}

class Sgd {
 public:
  Sgd() = default;
  Sgd(const std::vector<Tensor>& params, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
    for (const auto& p : params) buffers_.emplace_back(p.shape());
  }

  void step(std::vector<Tensor>& params, const std::vector<Array>& grads, double lr) {
    if (params.size() != grads.size() || params.size() != buffers_.size())
      throw ShapeError("Sgd::step: parameter list does not match optimizer state");
    for (std::size_t i = 0; i < params.size(); ++i)
      sgd_step(params[i].mutable_value(), grads[i], buffers_[i], lr, momentum_, weight_decay_);
  }

  std::vector<Array>& buffers() { return buffers_; }
  const std::vector<Array>& buffers() const { return buffers_; }

 private:
  double momentum_ = 0.9;
  double weight_decay_ = 1e-4;
  std::vector<Array> buffers_;
};

/// AdamW (decoupled weight decay), defaults as in common deep-learning libraries.
class AdamW {
 public:
  AdamW(const std::vector<Tensor>& params, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8, double weight_decay = 1e-2)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const auto& p : params) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  void step(std::vector<Tensor>& params, const std::vector<Array>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Array& p = params[k].mutable_value();
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double g = grads[k][i];
        if (!std::isfinite(g)) throw DivergenceError("AdamW: non-finite gradient");
        p[i] -= lr_ * wd_ * p[i];
        m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * g;
        v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * g * g;
        p[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_, wd_;
  std::size_t t_ = 0;
  std::vector<Array> m_, v_;
};

enum class ScheduleKind { step, cosine, constant };

inline ScheduleKind parse_schedule(std::string_view s) {
  if (s == "step") return ScheduleKind::step;
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "constant") return ScheduleKind::constant;
  throw ConfigError("unknown schedule '" + std::string(s) + "' (expected step|cosine|constant)");
}

inline const char* to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::step: return "step";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::constant: return "constant";
  }
  return "?";
}

struct Schedule {
  ScheduleKind kind = ScheduleKind::step;
  std::size_t period = 5;  // step only
  double factor = 0.1;     // step only
};

/// step: base * factor^floor(epoch/period); cosine: base * (1 + cos(pi*epoch/total)) / 2.
inline double lr_schedule(const Schedule& s, std::size_t epoch, std::size_t total_epochs, double base_lr) {
  switch (s.kind) {
    case ScheduleKind::step:
      return base_lr * std::pow(s.factor, static_cast<double>(epoch / std::max<std::size_t>(s.period, 1)));
    case ScheduleKind::cosine:
      return base_lr * 0.5 *
             (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(std::max<std::size_t>(total_epochs, 1))));
    case ScheduleKind::constant:
      return base_lr;
  }
  return base_lr;
}

}  // namespace nmask
