#pragma once

// Intensity histograms of original images, masked images and masks, with a
// cross-modality dispersion summary: the standard deviation across
// modalities of per-modality mean intensity, before and after masking.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nmask/error.hpp"
#include "nmask/tensor.hpp"

namespace nmask {

struct ImageHistograms {
  std::size_t image_id = 0;
  std::uint8_t modality = 0;
  std::vector<std::size_t> original, masked, mask;
  double mean_original = 0.0;
  double mean_masked = 0.0;
};

struct ModalitySummary {
  std::uint8_t modality = 0;
  std::size_t images = 0;
  double mean_original = 0.0;
  double mean_masked = 0.0;
};

struct HistogramReport {
  std::size_t bins = 64;
  std::vector<ImageHistograms> images;
  std::vector<ModalitySummary> modalities;
  double dispersion_original = 0.0;  // population sd across modality means
  double dispersion_masked = 0.0;
};

inline std::size_t bin_of(double v, std::size_t bins) {
  const auto b = static_cast<std::size_t>(std::floor(std::clamp(v, 0.0, 1.0) * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

/// Bin-centre weighted mean of a histogram on [0,1].
inline double histogram_mean(std::span<const std::size_t> counts) {
  double total = 0.0, acc = 0.0;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    total += static_cast<double>(counts[b]);
    acc += static_cast<double>(counts[b]) * (static_cast<double>(b) + 0.5) / static_cast<double>(counts.size());
  }
  return total > 0.0 ? acc / total : 0.0;
}

/// images [C,H,W] in [0,1]; masks [H,W] in [0,1]; one modality tag per image.
inline HistogramReport histogram_report(std::span<const Array> images, std::span<const Array> masks,
                                        std::span<const std::uint8_t> modality, std::span<const std::size_t> ids,
                                        std::size_t bins = 64) {
  if (images.size() != masks.size() || images.size() != modality.size() || images.size() != ids.size())
    throw ShapeError("histogram_report: images, masks, modality tags and ids differ in count");
  if (bins == 0) throw ConfigError("eval.hist_bins must be positive");
  HistogramReport r;
  r.bins = bins;
  std::map<std::uint8_t, ModalitySummary> acc;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Array& im = images[n];
    const Array& m = masks[n];
    if (im.rank() != 3 || m.rank() != 2 || im.dim(1) != m.dim(0) || im.dim(2) != m.dim(1))
      throw ShapeError("histogram_report: image " + shape_str(im.shape()) + " vs mask " + shape_str(m.shape()));
    ImageHistograms h;
    h.image_id = ids[n];
    h.modality = modality[n];
    h.original.assign(bins, 0);
    h.masked.assign(bins, 0);
    h.mask.assign(bins, 0);
    const std::size_t hw = m.numel();
    for (double v : m.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("histogram_report: mask value outside [0,1]");
      ++h.mask[bin_of(v, bins)];
    }
    double so = 0.0, sm = 0.0;
    for (std::size_t c = 0; c < im.dim(0); ++c)
      for (std::size_t p = 0; p < hw; ++p) {
        const double v = im[c * hw + p];
        const double mv = v * m[p];
        ++h.original[bin_of(v, bins)];
        ++h.masked[bin_of(mv, bins)];
        so += v;
        sm += mv;
      }
    h.mean_original = so / static_cast<double>(im.numel());
    h.mean_masked = sm / static_cast<double>(im.numel());
    auto& s = acc[h.modality];
    s.modality = h.modality;
    ++s.images;
    s.mean_original += h.mean_original;
    s.mean_masked += h.mean_masked;
    r.images.push_back(std::move(h));
  }
  for (auto& [_, s] : acc) {
    s.mean_original /= static_cast<double>(s.images);
    s.mean_masked /= static_cast<double>(s.images);
    r.modalities.push_back(s);
  }
  auto sd = [&](auto field) {
    if (r.modalities.empty()) return 0.0;
    double m = 0.0, ss = 0.0;
    for (const auto& s : r.modalities) m += s.*field;
    m /= static_cast<double>(r.modalities.size());
    for (const auto& s : r.modalities) ss += (s.*field - m) * (s.*field - m);
    return std::sqrt(ss / static_cast<double>(r.modalities.size()));
  };
  r.dispersion_original = sd(&ModalitySummary::mean_original);
  r.dispersion_masked = sd(&ModalitySummary::mean_masked);
  return r;
}

inline void write_histogram_csv(const std::string& path, const HistogramReport& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "image_id,bin_lo,bin_hi,count_original,count_masked,count_mask\n" << std::setprecision(17);
  const auto nb = static_cast<double>(r.bins);
  for (const auto& h : r.images)
    for (std::size_t b = 0; b < r.bins; ++b)
      out << h.image_id << ',' << static_cast<double>(b) / nb << ',' << static_cast<double>(b + 1) / nb << ','
          << h.original[b] << ',' << h.masked[b] << ',' << h.mask[b] << '\n';
}

inline void write_histogram_summary(const std::string& path, const HistogramReport& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << std::setprecision(10);
  out << "modality,images,mean_original,mean_masked\n";
  for (const auto& s : r.modalities)
    out << static_cast<int>(s.modality) << ',' << s.images << ',' << s.mean_original << ',' << s.mean_masked << '\n';
  out << "\ndispersion_original=" << r.dispersion_original << '\n'
      << "dispersion_masked=" << r.dispersion_masked << '\n'
      << "homogenized=" << (r.dispersion_masked <= r.dispersion_original ? "yes" : "no") << '\n';
}

}  // namespace nmask
