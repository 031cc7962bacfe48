#pragma once

// Noise-mask post-processing: upsample the low-resolution Beta sample, blur
// it, multiply it into the image. Also the fixed-distribution masks used by
// the noise-model ablations.
//
// Blur parameters follow the best configuration reported for the method
// (kernel 13, sigma 6). "S" is read as the Gaussian sigma: a strided blur
// would shrink the mask and could no longer be multiplied into the image.

#include <cmath>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "nmask/error.hpp"
#include "nmask/rng.hpp"
#include "nmask/tensor.hpp"

namespace nmask {

enum class UpsampleMode { nearest, bilinear };

inline UpsampleMode parse_upsample_mode(std::string_view s) {
  if (s == "nearest") return UpsampleMode::nearest;
  if (s == "bilinear") return UpsampleMode::bilinear;
  throw ConfigError("unknown upsample mode '" + std::string(s) + "' (expected nearest|bilinear)");
}

inline const char* to_string(UpsampleMode m) { return m == UpsampleMode::nearest ? "nearest" : "bilinear"; }

struct MaskConfig {
  std::size_t noise_h = 8;
  std::size_t noise_w = 8;
  UpsampleMode upsample = UpsampleMode::nearest;
  std::size_t blur_kernel = 13;
  double blur_sigma = 6.0;
  bool enable_blur = true;

  void validate(std::size_t image_h, std::size_t image_w) const {
    if (noise_h == 0 || noise_w == 0) throw ConfigError("mask.noise_h/mask.noise_w must be positive");
    if (noise_h > image_h || noise_w > image_w)
      throw ConfigError("mask noise matrix " + std::to_string(noise_h) + "x" + std::to_string(noise_w) +
                        " exceeds image " + std::to_string(image_h) + "x" + std::to_string(image_w));
    if (blur_kernel % 2 == 0) throw ConfigError("mask.blur_kernel must be odd");
    if (blur_kernel > std::min(image_h, image_w)) throw ConfigError("mask.blur_kernel exceeds image size");
    if (!(blur_sigma > 0.0)) throw ConfigError("mask.blur_sigma must be positive");
  }
};

/// Resize a [h,w] matrix to [target_h,target_w]. Nearest uses source index
/// floor(i*h/target_h); bilinear uses half-pixel centres (align_corners=false)
/// with source coordinates clamped to the border.
inline Array upsample(const Array& m, std::size_t target_h, std::size_t target_w, UpsampleMode mode) {
  if (m.rank() != 2) throw ShapeError("upsample: expected [h,w], got " + shape_str(m.shape()));
  const std::size_t h = m.dim(0), w = m.dim(1);
  if (target_h < h || target_w < w) throw ContractError("upsample: target smaller than source");
  Array out(Shape{target_h, target_w});
  if (mode == UpsampleMode::nearest) {
    for (std::size_t i = 0; i < target_h; ++i) {
      const std::size_t si = i * h / target_h;
      for (std::size_t j = 0; j < target_w; ++j) out.at(i, j) = m.at(si, j * w / target_w);
    }
    return out;
  }
  auto coord = [](std::size_t i, std::size_t src, std::size_t dst) {
    double x = (static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(src - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t i1 = std::min(i0 + 1, src - 1);
    return std::tuple{i0, i1, x - static_cast<double>(i0)};
  };
  for (std::size_t i = 0; i < target_h; ++i) {
    const auto [y0, y1, fy] = coord(i, h, target_h);
    for (std::size_t j = 0; j < target_w; ++j) {
      const auto [x0, x1, fx] = coord(j, w, target_w);
      const double top = m.at(y0, x0) * (1.0 - fx) + m.at(y0, x1) * fx;
      const double bot = m.at(y1, x0) * (1.0 - fx) + m.at(y1, x1) * fx;
      out.at(i, j) = top * (1.0 - fy) + bot * fy;
    }
  }
  return out;
}

/// Normalised 1-D Gaussian weights of odd length `k`.
inline std::vector<double> gaussian_kernel_1d(std::size_t k, double sigma) {
  if (k % 2 == 0) throw ContractError("gaussian kernel size must be odd, got " + std::to_string(k));
  if (!(sigma > 0.0)) throw ContractError("gaussian sigma must be positive");
  const auto r = static_cast<double>(k / 2);
  std::vector<double> w(k);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = static_cast<double>(i) - r;
    w[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

namespace detail {

// Half-sample symmetric reflection: (d c b a | a b c d | d c b a).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t period = 2 * len;
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < len ? i : period - 1 - i);
}

}  // namespace detail

/// Separable Gaussian blur with symmetric border reflection, stride 1.
inline Array gaussian_blur(const Array& m, std::size_t kernel, double sigma) {
  if (m.rank() != 2) throw ShapeError("gaussian_blur: expected [H,W], got " + shape_str(m.shape()));
  const auto w = gaussian_kernel_1d(kernel, sigma);
  const std::size_t h = m.dim(0), wd = m.dim(1);
  const auto r = static_cast<std::ptrdiff_t>(kernel / 2);
  Array tmp(m.shape()), out(m.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wd; ++j) {
      double s = 0.0;
      for (std::ptrdiff_t k = -r; k <= r; ++k)
        s += w[static_cast<std::size_t>(k + r)] * m.at(i, detail::reflect_index(static_cast<std::ptrdiff_t>(j) + k, wd));
      tmp.at(i, j) = s;
    }
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wd; ++j) {
      double s = 0.0;
      for (std::ptrdiff_t k = -r; k <= r; ++k)
        s += w[static_cast<std::size_t>(k + r)] * tmp.at(detail::reflect_index(static_cast<std::ptrdiff_t>(i) + k, h), j);
      out.at(i, j) = s;
    }
  return out;
}

/// out[c,i,j] = image[c,i,j] * mask[i,j]
inline Array apply_mask(const Array& image, const Array& mask) {
  if (image.rank() != 3 || mask.rank() != 2 || image.dim(1) != mask.dim(0) || image.dim(2) != mask.dim(1))
    throw ShapeError("apply_mask: image " + shape_str(image.shape()) + " vs mask " + shape_str(mask.shape()));
  Array out(image.shape());
  const std::size_t hw = mask.numel();
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t k = 0; k < hw; ++k) out[c * hw + k] = image[c * hw + k] * mask[k];
  return out;
}

/// Full-resolution mask: upsample, then blur when enabled.
inline Array make_full_mask(const Array& raw, std::size_t image_h, std::size_t image_w, const MaskConfig& cfg) {
  Array up = upsample(raw, image_h, image_w, cfg.upsample);
  if (!cfg.enable_blur) return up;
  return gaussian_blur(up, cfg.blur_kernel, cfg.blur_sigma);
}

enum class FixedNoise { gaussian, uniform, pure };

inline FixedNoise parse_fixed_noise(std::string_view s) {
  if (s == "gaussian") return FixedNoise::gaussian;
  if (s == "uniform") return FixedNoise::uniform;
  if (s == "pure") return FixedNoise::pure;
  throw ConfigError("unknown fixed noise kind '" + std::string(s) + "'");
}

inline constexpr double kGaussianMaskMean = 0.5;
inline constexpr double kGaussianMaskStd = 0.25;

/// Fixed-distribution mask of size [h,w]. `pure` is uniform noise meant to be
/// drawn at image resolution and applied without make_full_mask.
inline Array fixed_noise_mask(FixedNoise kind, std::size_t h, std::size_t w, Rng& rng) {
  Array out(Shape{h, w});
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (kind == FixedNoise::gaussian)
      out[i] = std::clamp(kGaussianMaskMean + kGaussianMaskStd * rng.normal(), 0.0, 1.0);
    else
      out[i] = rng.uniform();
  }
  return out;
}

/// Spatial total variation: sum of absolute horizontal and vertical differences.
inline double total_variation(const Array& m) {
  double tv = 0.0;
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) {
      if (i + 1 < m.dim(0)) tv += std::abs(m.at(i + 1, j) - m.at(i, j));
      if (j + 1 < m.dim(1)) tv += std::abs(m.at(i, j + 1) - m.at(i, j));
    }
  return tv;
}

}  // namespace nmask
