#pragma once

// Classifier backbone, lightweight mask policy and the dataset/image-level
// exponential moving averages of the policy's Beta parameters.
//
// Both networks are stacks of 3x3 conv (pad 1) + bias + relu blocks followed
// by global average pooling. There is no batch normalisation.

#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nmask/distributions.hpp"
#include "nmask/error.hpp"
#include "nmask/ops.hpp"
#include "nmask/rng.hpp"
#include "nmask/tensor.hpp"

namespace nmask {

struct ConvStackSpec {
  std::size_t in_channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> strides;

  void validate(const char* who) const {
    if (in_channels == 0 || height == 0 || width == 0) throw ConfigError(std::string(who) + ": empty input geometry");
    if (widths.empty()) throw ConfigError(std::string(who) + ": needs at least one conv block");
    if (widths.size() != strides.size())
      throw ConfigError(std::string(who) + ": widths and strides differ in length");
    for (auto w : widths)
      if (w == 0) throw ConfigError(std::string(who) + ": zero conv width");
    for (auto s : strides)
      if (s == 0) throw ConfigError(std::string(who) + ": zero stride");
  }

  std::size_t feature_dim() const { return widths.back(); }
};

struct ClassifierSpec {
  ConvStackSpec body{1, 28, 28, {8, 16, 32}, {1, 2, 2}};
  std::size_t num_classes = 12;

  void validate() const {
    body.validate("classifier");
    if (num_classes < 2) throw ConfigError("classifier: num_classes must be >= 2");
  }
};

struct PolicySpec {
  ConvStackSpec body{1, 28, 28, {4, 8}, {2, 2}};
  std::size_t noise_h = 8;
  std::size_t noise_w = 8;
  bool zero_head = true;

  void validate() const {
    body.validate("policy");
    if (noise_h == 0 || noise_w == 0) throw ConfigError("policy: empty noise matrix");
  }
};

namespace detail {

inline Array kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Array w(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.vec()) v = (2.0 * rng.uniform() - 1.0) * bound;
  return w;
}

inline std::vector<Tensor> init_conv_stack(const ConvStackSpec& spec, Rng& rng) {
  std::vector<Tensor> params;
  std::size_t in = spec.in_channels;
  for (std::size_t out : spec.widths) {
    params.push_back(Tensor::parameter(kaiming_uniform(Shape{out, in, 3, 3}, in * 9, rng)));
    params.push_back(Tensor::parameter(Array(Shape{out})));
    in = out;
  }
  return params;
}

// Runs the conv blocks and global average pooling: [N,C,H,W] -> [N,D].
inline Tensor conv_stack_features(const ConvStackSpec& spec, std::span<const Tensor> params, const Tensor& x) {
  if (x.shape().size() != 4 || x.dim(1) != spec.in_channels || x.dim(2) != spec.height || x.dim(3) != spec.width)
    throw ShapeError("network input " + shape_str(x.shape()) + " does not match configured [N," +
                     std::to_string(spec.in_channels) + "," + std::to_string(spec.height) + "," +
                     std::to_string(spec.width) + "]");
  if (x.dim(0) == 0) throw ContractError("network input: empty batch");
  Tensor h = x;
  for (std::size_t b = 0; b < spec.widths.size(); ++b)
    h = relu(add_channel_bias(conv2d(h, params[2 * b], spec.strides[b], 1), params[2 * b + 1]));
  return mean(h, {2, 3});
}

// Parameters are shared handles; network copies get fresh leaves.
inline std::vector<Tensor> clone_params(const std::vector<Tensor>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(Tensor::parameter(p.value()));
  return out;
}

inline std::size_t count_params(const std::vector<Tensor>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

}  // namespace detail

/// Small CNN classifier: conv blocks -> global average pool -> linear head.
class ClassifierNet {
 public:
  ClassifierNet() = default;
  ClassifierNet(const ClassifierNet& o) : spec_(o.spec_), params_(detail::clone_params(o.params_)), param_count_(o.param_count_) {}
  ClassifierNet& operator=(const ClassifierNet& o) {
    if (this != &o) {
      spec_ = o.spec_;
      params_ = detail::clone_params(o.params_);
      param_count_ = o.param_count_;
    }
    return *this;
  }
  ClassifierNet(ClassifierNet&&) noexcept = default;
  ClassifierNet& operator=(ClassifierNet&&) noexcept = default;

  /// Kaiming-uniform (fan-in, relu gain) weights, zero biases.
  ClassifierNet(ClassifierSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    params_ = detail::init_conv_stack(spec_.body, rng);
    const std::size_t d = spec_.body.feature_dim();
    params_.push_back(Tensor::parameter(detail::kaiming_uniform(Shape{d, spec_.num_classes}, d, rng)));
    params_.push_back(Tensor::parameter(Array(Shape{spec_.num_classes})));
    param_count_ = detail::count_params(params_);
  }

  const ClassifierSpec& spec() const { return spec_; }
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::size_t parameter_count() const { return param_count_; }
  std::size_t feature_dim() const { return spec_.body.feature_dim(); }

  /// Penultimate (post-pool, pre-head) activations [N, D].
  Tensor features(const Tensor& x) const {
    return detail::conv_stack_features(spec_.body, std::span<const Tensor>(params_).first(params_.size() - 2), x);
  }

  /// Logits [N, num_classes].
  Tensor forward(const Tensor& x) const {
    return add_row_bias(matmul(features(x), params_[params_.size() - 2]), params_.back());
  }

  /// Replace parameter values (shapes must match); used by checkpoint loading.
  void set_parameter_values(const std::vector<Array>& values) {
    if (values.size() != params_.size()) throw ShapeError("classifier: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].shape() != params_[i].shape())
        throw ShapeError("classifier: parameter " + std::to_string(i) + " shape mismatch");
      params_[i].mutable_value() = values[i];
    }
  }

 private:
  ClassifierSpec spec_;
  std::vector<Tensor> params_;
  std::size_t param_count_ = 0;
};

/// Mask policy: feature extractor g (conv blocks + pooling) and a projection
/// h with two linear heads emitting the pre-exponential alpha', beta' maps.
class PolicyNet {
 public:
  PolicyNet() = default;
  PolicyNet(const PolicyNet& o) : spec_(o.spec_), params_(detail::clone_params(o.params_)), param_count_(o.param_count_) {}
  PolicyNet& operator=(const PolicyNet& o) {
    if (this != &o) {
      spec_ = o.spec_;
      params_ = detail::clone_params(o.params_);
      param_count_ = o.param_count_;
    }
    return *this;
  }
  PolicyNet(PolicyNet&&) noexcept = default;
  PolicyNet& operator=(PolicyNet&&) noexcept = default;

  PolicyNet(PolicySpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    params_ = detail::init_conv_stack(spec_.body, rng);
    const std::size_t d = spec_.body.feature_dim();
    const std::size_t hw = spec_.noise_h * spec_.noise_w;
    for (int head = 0; head < 2; ++head) {
      params_.push_back(Tensor::parameter(spec_.zero_head ? Array(Shape{d, hw})
                                                          : detail::kaiming_uniform(Shape{d, hw}, d, rng)));
      params_.push_back(Tensor::parameter(Array(Shape{hw})));
    }
    param_count_ = detail::count_params(params_);
  }

  const PolicySpec& spec() const { return spec_; }
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::size_t parameter_count() const { return param_count_; }

  /// Returns (alpha', beta'), each [N, noise_h, noise_w], unconstrained reals.
  std::pair<Tensor, Tensor> forward(const Tensor& x) const {
    const std::size_t k = params_.size();
    Tensor feat = detail::conv_stack_features(spec_.body, std::span<const Tensor>(params_).first(k - 4), x);
    const std::size_t n = x.dim(0);
    const Shape map{n, spec_.noise_h, spec_.noise_w};
    Tensor a = reshape(add_row_bias(matmul(feat, params_[k - 4]), params_[k - 3]), map);
    Tensor b = reshape(add_row_bias(matmul(feat, params_[k - 2]), params_[k - 1]), map);
    return {a, b};
  }

  void set_parameter_values(const std::vector<Array>& values) {
    if (values.size() != params_.size()) throw ShapeError("policy: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].shape() != params_[i].shape())
        throw ShapeError("policy: parameter " + std::to_string(i) + " shape mismatch");
      params_[i].mutable_value() = values[i];
    }
  }

 private:
  PolicySpec spec_;
  std::vector<Tensor> params_;
  std::size_t param_count_ = 0;
};

inline std::pair<Tensor, Tensor> policy_forward(const Tensor& image_batch, const PolicyNet& policy) {
  return policy.forward(image_batch);
}

inline Tensor classifier_forward(const Tensor& masked_batch, const ClassifierNet& net) {
  return net.forward(masked_batch);
}

/// Dataset-level Beta parameter maps (pre-exponential) and EMA coefficients.
/// Dataset maps start at zero, i.e. Beta(1,1) after exponentiation.
struct EmaState {
  Array alpha_dataset;
  Array beta_dataset;
  double tau_i = 0.9;
  double tau_d = 0.99;

  static EmaState zeros(std::size_t h, std::size_t w, double tau_i = 0.9, double tau_d = 0.99) {
    EmaState s{Array(Shape{h, w}), Array(Shape{h, w}), tau_i, tau_d};
    s.validate();
    return s;
  }

  void validate() const {
    if (alpha_dataset.rank() != 2 || alpha_dataset.shape() != beta_dataset.shape())
      throw ShapeError("EmaState: dataset maps must share an [h,w] shape");
    if (!(tau_i > 0.0 && tau_i < 1.0) || !(tau_d > 0.0 && tau_d < 1.0))
      throw ConfigError("EmaState: tau_i and tau_d must lie strictly inside (0,1)");
  }

  friend bool operator==(const EmaState&, const EmaState&) = default;
};

struct BlendedParams {
  Tensor alpha_new;  // pre-exponential, [N,h,w]
  Tensor beta_new;
  BetaParams params;  // exp(alpha_new), exp(beta_new)
  EmaState next;      // dataset maps after the batch update
};

/// Image-level blend in pre-exponential space,
///   alpha_new = tau_i * alpha_dataset + (1 - tau_i) * alpha_image,
/// dataset update from the batch mean of the image maps,
///   alpha_dataset' = tau_d * alpha_dataset + (1 - tau_d) * mean_n alpha_image,
/// then exponentiation to positive Beta parameters. Same for beta.
/// Gradients flow to the image maps; the dataset maps are constants.
inline BlendedParams blend_params(const Tensor& alpha_img, const Tensor& beta_img, const EmaState& state) {
  state.validate();
  const std::size_t h = state.alpha_dataset.dim(0), w = state.alpha_dataset.dim(1);
  auto check = [&](const Tensor& t, const char* name) {
    if (t.shape().size() != 3 || t.dim(1) != h || t.dim(2) != w)
      throw ShapeError(std::string("blend_params: ") + name + " " + shape_str(t.shape()) + " does not match [N," +
                       std::to_string(h) + "," + std::to_string(w) + "]");
  };
  check(alpha_img, "alpha");
  check(beta_img, "beta");
  if (alpha_img.shape() != beta_img.shape()) throw ShapeError("blend_params: alpha/beta batch mismatch");
  const std::size_t n = alpha_img.dim(0);
  const std::size_t hw = h * w;

  auto blend = [&](const Tensor& img, const Array& dataset) {
    Array prior(img.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < hw; ++k) prior[i * hw + k] = state.tau_i * dataset[k];
    return add(Tensor(std::move(prior)), scale(img, 1.0 - state.tau_i));
  };
  auto update = [&](const Tensor& img, const Array& dataset) {
    Array out(dataset.shape());
    for (std::size_t k = 0; k < hw; ++k) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += img.value()[i * hw + k];
      m /= static_cast<double>(n);
      out[k] = state.tau_d * dataset[k] + (1.0 - state.tau_d) * m;
    }
    return out;
  };

  BlendedParams r;
  r.alpha_new = blend(alpha_img, state.alpha_dataset);
  r.beta_new = blend(beta_img, state.beta_dataset);
  r.params = BetaParams{exp(r.alpha_new), exp(r.beta_new)};
  r.next = EmaState{update(alpha_img, state.alpha_dataset), update(beta_img, state.beta_dataset), state.tau_i,
                    state.tau_d};
  return r;
}

/// Stack [C,H,W] images into a constant [N,C,H,W] tensor.
inline Tensor stack_images(const std::vector<Array>& images) {
  if (images.empty()) throw ContractError("stack_images: empty batch");
  const Shape& s = images.front().shape();
  Array out(Shape{images.size(), s.at(0), s.at(1), s.at(2)});
  const std::size_t per = images.front().numel();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) throw ShapeError("stack_images: inconsistent image shapes");
    std::copy(images[i].data().begin(), images[i].data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor(std::move(out));
}

}  // namespace nmask
