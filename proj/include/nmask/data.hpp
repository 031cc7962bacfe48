#pragma once

// Labelled image collections, preprocessing, stratified splits, the raster
// bundle format and a synthetic multi-modality generator.
//
// Raster bundle (little-endian):
//   "NMDS" | version u32 | num_samples u32 | channels u32 | height u32 |
//   width u32 | num_classes u32 | norm_mean f64 x C | norm_std f64 x C |
//   pixels u8 x (N*C*H*W) | labels u16 x N | modality u8 x N
// Optional sidecar CSV: id,label,modality,concept

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nmask/error.hpp"
#include "nmask/io.hpp"
#include "nmask/rng.hpp"
#include "nmask/tensor.hpp"

namespace nmask {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct Dataset {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t num_classes = 0;
  std::vector<Array> images;  // [C,H,W], values in [0,1]
  std::vector<int> labels;
  std::vector<std::uint8_t> modality;
  std::vector<std::uint16_t> concept_tag;
  std::vector<Split> split;  // empty until stratified_split
  std::vector<double> norm_mean;
  std::vector<double> norm_std;

  std::size_t size() const { return images.size(); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  void validate() const {
    const std::size_t n = images.size();
    if (labels.size() != n || modality.size() != n || concept_tag.size() != n)
      throw ShapeError("Dataset: parallel sequences differ in length");
    if (!split.empty() && split.size() != n) throw ShapeError("Dataset: split assignment length mismatch");
    for (const auto& im : images)
      if (im.shape() != Shape{channels, height, width}) throw ShapeError("Dataset: image shape mismatch");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw IndexError("Dataset: label out of range");
    if (norm_mean.size() != channels || norm_std.size() != channels)
      throw ShapeError("Dataset: normalisation stats must have one entry per channel");
  }

  /// Hash of the pixel payload, labels and modality tags.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& im : images)
      h = io::fnv1a(reinterpret_cast<const std::uint8_t*>(im.data().data()), im.numel() * sizeof(double), h);
    h = io::fnv1a(reinterpret_cast<const std::uint8_t*>(labels.data()), labels.size() * sizeof(int), h);
    h = io::fnv1a(modality.data(), modality.size(), h);
    return h;
  }
};

// --- preprocessing -------------------------------------------------------

struct Augment {
  double flip_prob = 0.5;
  std::size_t crop_pad = 2;
};

/// Training mode: random horizontal flip, zero-pad + random crop, then
/// per-channel normalisation. Evaluation mode (rng == nullptr): normalisation only.
inline Array preprocess(const Array& image, const Augment& aug, std::span<const double> mean,
                        std::span<const double> stdev, Rng* rng) {
  if (image.rank() != 3) throw ShapeError("preprocess: expected [C,H,W], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (mean.size() != c || stdev.size() != c) throw ShapeError("preprocess: normalisation stats per channel");
  Array out = image;
  if (rng) {
    const bool flip = rng->uniform() < aug.flip_prob;
    std::size_t dy = aug.crop_pad, dx = aug.crop_pad;
    if (aug.crop_pad > 0) {
      dy = rng->below(2 * aug.crop_pad + 1);
      dx = rng->below(2 * aug.crop_pad + 1);
    }
    const auto pad = static_cast<std::ptrdiff_t>(aug.crop_pad);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + dy) - pad;
          std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dx) - pad;
          double v = 0.0;
          if (si >= 0 && si < static_cast<std::ptrdiff_t>(h) && sj >= 0 && sj < static_cast<std::ptrdiff_t>(w)) {
            if (flip) sj = static_cast<std::ptrdiff_t>(w) - 1 - sj;
            v = image[(ch * h + static_cast<std::size_t>(si)) * w + static_cast<std::size_t>(sj)];
          }
          out[(ch * h + i) * w + j] = v;
        }
  }
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t k = 0; k < h * w; ++k) out[ch * h * w + k] = (out[ch * h * w + k] - mean[ch]) / stdev[ch];
  return out;
}

// --- splitting -----------------------------------------------------------

/// Per-channel mean/std over the train split (all samples when unsplit).
inline void compute_norm_stats(Dataset& ds) {
  std::vector<std::size_t> idx = ds.split.empty() ? std::vector<std::size_t>(ds.size()) : ds.indices(Split::train);
  if (ds.split.empty()) std::iota(idx.begin(), idx.end(), std::size_t{0});
  ds.norm_mean.assign(ds.channels, 0.0);
  ds.norm_std.assign(ds.channels, 1.0);
  if (idx.empty()) return;
  const std::size_t hw = ds.height * ds.width;
  for (std::size_t c = 0; c < ds.channels; ++c) {
    double s = 0.0, s2 = 0.0;
    for (auto i : idx)
      for (std::size_t k = 0; k < hw; ++k) {
        const double v = ds.images[i][c * hw + k];
        s += v;
        s2 += v * v;
      }
    const double n = static_cast<double>(idx.size() * hw);
    const double m = s / n;
    ds.norm_mean[c] = m;
    ds.norm_std[c] = std::max(std::sqrt(std::max(s2 / n - m * m, 0.0)), 1e-6);
  }
}

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;

  void validate() const {
    if (!(train > 0 && val > 0 && test > 0) || std::abs(train + val + test - 1.0) > 1e-9)
      throw ConfigError("split fractions must be positive and sum to 1");
  }
};

/// Per-class proportional assignment; floor(n * f) to val and test, the
/// remainder to train. Classes with fewer than 3 samples go to train with a
/// warning on stderr.
inline void stratified_split(Dataset& ds, SplitFractions f, std::uint64_t seed) {
  f.validate();
  ds.split.assign(ds.size(), Split::train);
  Rng root(seed);
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (static_cast<std::size_t>(ds.labels[i]) == c) members.push_back(i);
    if (members.empty()) continue;
    if (members.size() < 3) {
      std::cerr << "warning: class " << c << " has " << members.size()
                << " samples, fewer than the number of splits; assigning all to train\n";
      continue;
    }
    Rng rng = root.split(c);
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
    const auto n = static_cast<double>(members.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * f.val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * f.test + 1e-9));
    for (std::size_t k = 0; k < n_val; ++k) ds.split[members[k]] = Split::val;
    for (std::size_t k = n_val; k < n_val + n_test; ++k) ds.split[members[k]] = Split::test;
  }
}

// --- synthetic generator -------------------------------------------------

/// Intensity law of one synthetic modality: pixel = (bg + contrast*shape + noise)^gamma.
struct ModalityLaw {
  double background;
  double contrast;
  double noise_std;
  double gamma;
};

/// Fraction of the image covered by a typical class shape; only used to
/// compute the nominal modality mean.
inline constexpr double kNominalCoverage = 0.15;

struct SynthSpec {
  std::size_t num_modalities = 3;
  std::size_t classes_per_modality = 4;
  std::size_t samples_per_class = 50;
  std::size_t image_size = 28;
  std::uint64_t seed = 0;
  // CT-like (dark, clean), MR-like (mid, moderate noise), US-like (bright, speckled).
  std::vector<ModalityLaw> laws{{0.05, 0.45, 0.05, 1.0}, {0.30, 0.40, 0.08, 0.8}, {0.55, 0.35, 0.12, 0.7}};

  static double nominal_mean(const ModalityLaw& m) {
    return std::pow(std::clamp(m.background + m.contrast * kNominalCoverage, 0.0, 1.0), m.gamma);
  }

  void validate() const {
    if (num_modalities == 0 || num_modalities > laws.size())
      throw ConfigError("synth: num_modalities must be in [1," + std::to_string(laws.size()) + "]");
    if (classes_per_modality == 0 || classes_per_modality > 6)
      throw ConfigError("synth: classes_per_modality must be in [1,6]");
    if (samples_per_class == 0) throw ConfigError("synth: samples_per_class must be positive");
    if (image_size < 16) throw ConfigError("synth: image_size must be >= 16");
    for (std::size_t a = 0; a < num_modalities; ++a)
      for (std::size_t b = a + 1; b < num_modalities; ++b)
        if (std::abs(nominal_mean(laws[a]) - nominal_mean(laws[b])) < 0.15)
          throw ConfigError("synth: modalities " + std::to_string(a) + " and " + std::to_string(b) +
                            " have nominal mean intensities closer than 0.15");
  }
};

namespace detail {

// Anti-aliased coverage in [0,1] of shape `kind` at pixel (x, y).
inline double shape_coverage(std::size_t kind, double x, double y, double cx, double cy, double r) {
  auto soft = [](double signed_dist) { return std::clamp(0.5 - signed_dist, 0.0, 1.0); };
  const double dx = x - cx, dy = y - cy;
  const double d = std::sqrt(dx * dx + dy * dy);
  const double half_thick = std::max(1.5, 0.25 * r);
  switch (kind % 6) {
    case 0: return soft(d - r);                                              // disk
    case 1: return soft(std::abs(d - r) - half_thick * 0.7);                 // ring
    case 2: return std::min(soft(std::abs(dy) - half_thick), soft(std::abs(dx) - 1.3 * r));  // horizontal bar
    case 3: return std::min(soft(std::abs(dx) - half_thick), soft(std::abs(dy) - 1.3 * r));  // vertical bar
    case 4: {                                                                // cross
      const double h = std::min(soft(std::abs(dy) - half_thick * 0.8), soft(std::abs(dx) - r));
      const double v = std::min(soft(std::abs(dx) - half_thick * 0.8), soft(std::abs(dy) - r));
      return std::max(h, v);
    }
    default: {                                                               // two blobs
      const double r2 = 0.55 * r;
      const double d1 = std::hypot(dx - 0.8 * r, dy), d2 = std::hypot(dx + 0.8 * r, dy);
      return std::max(soft(d1 - r2), soft(d2 - r2));
    }
  }
}

inline double quantize_u8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace detail

/// Deterministic synthetic dataset: label = modality * classes_per_modality + shape class.
/// Pixels are quantised to k/255 so bundles round-trip exactly.
inline Dataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.channels = 1;
  ds.height = ds.width = spec.image_size;
  ds.num_classes = spec.num_modalities * spec.classes_per_modality;
  const Rng root(spec.seed);
  const auto size = static_cast<double>(spec.image_size);
  for (std::size_t m = 0; m < spec.num_modalities; ++m) {
    const ModalityLaw& law = spec.laws[m];
    for (std::size_t c = 0; c < spec.classes_per_modality; ++c)
      for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
        Rng rng = root.split(m, c, s);
        const double cx = size / 2 - 0.5 + (rng.uniform() * 2 - 1) * 3.0;
        const double cy = size / 2 - 0.5 + (rng.uniform() * 2 - 1) * 3.0;
        const double r = size * (0.2 + 0.06 * (rng.uniform() * 2 - 1));
        const double contrast = law.contrast * (0.75 + 0.5 * rng.uniform());
        const double bg = law.background + 0.04 * (rng.uniform() * 2 - 1);
        Array im(Shape{1, spec.image_size, spec.image_size});
        for (std::size_t i = 0; i < spec.image_size; ++i)
          for (std::size_t j = 0; j < spec.image_size; ++j) {
            const double cov = detail::shape_coverage(c, static_cast<double>(j), static_cast<double>(i), cx, cy, r);
            const double v = bg + contrast * cov + law.noise_std * rng.normal();
            im[i * spec.image_size + j] = detail::quantize_u8(std::pow(std::clamp(v, 0.0, 1.0), law.gamma));
          }
        ds.images.push_back(std::move(im));
        ds.labels.push_back(static_cast<int>(m * spec.classes_per_modality + c));
        ds.modality.push_back(static_cast<std::uint8_t>(m));
        ds.concept_tag.push_back(static_cast<std::uint16_t>(c));
      }
  }
  compute_norm_stats(ds);
  return ds;
}

// --- raster bundle -------------------------------------------------------

inline constexpr std::uint32_t kBundleVersion = 1;

inline void write_bundle(const std::string& path, const Dataset& ds) {
  ds.validate();
  if (ds.num_classes > 65536) throw ConfigError("bundle: more than 65536 classes");
  io::Writer w;
  w.bytes("NMDS", 4);
  w.u32(kBundleVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.channels));
  w.u32(static_cast<std::uint32_t>(ds.height));
  w.u32(static_cast<std::uint32_t>(ds.width));
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  for (double m : ds.norm_mean) w.f64(m);
  for (double s : ds.norm_std) w.f64(s);
  for (const auto& im : ds.images)
    for (double v : im.data()) w.u8(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  for (int y : ds.labels) w.u16(static_cast<std::uint16_t>(y));
  for (auto m : ds.modality) w.u8(m);
  w.save(path);
}

inline void write_label_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "id,label,modality,concept\n";
  for (std::size_t i = 0; i < ds.size(); ++i)
    out << i << ',' << ds.labels[i] << ',' << int(ds.modality[i]) << ',' << ds.concept_tag[i] << '\n';
}

namespace detail {

struct CsvLabels {
  std::vector<int> labels;
  std::vector<std::uint8_t> modality;
  std::vector<std::uint16_t> concept_tag;
};

inline CsvLabels read_label_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file '" + path + "'");
  CsvLabels out;
  std::string line;
  std::getline(in, line);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    std::stringstream ss(line);
    std::string field;
    std::vector<long long> vals;
    while (std::getline(ss, field, ',')) {
      try {
        vals.push_back(std::stoll(field));
      } catch (const std::exception&) {
        throw io::FormatError("'" + path + "' row " + std::to_string(row) + ": non-integer field '" + field + "'");
      }
    }
    if (vals.size() < 2) throw io::FormatError("'" + path + "' row " + std::to_string(row) + ": expected id,label[,modality,concept]");
    if (vals[1] < 0) throw IndexError("'" + path + "' row " + std::to_string(row) + ": negative label");
    out.labels.push_back(static_cast<int>(vals[1]));
    out.modality.push_back(static_cast<std::uint8_t>(vals.size() > 2 ? vals[2] : 0));
    out.concept_tag.push_back(static_cast<std::uint16_t>(vals.size() > 3 ? vals[3] : vals[1]));
  }
  return out;
}

}  // namespace detail

/// Load and validate a raster bundle. When `labels_csv` is given its rows
/// must match the bundle count and override the bundle's modality/concept tags.
inline Dataset load_dataset(const std::string& path, const std::optional<std::string>& labels_csv = std::nullopt) {
  auto r = io::Reader::from_file(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::string(magic, 4) != "NMDS") throw io::FormatError("'" + path + "': bad magic (expected NMDS)");
  const auto version = r.u32("version");
  if (version != kBundleVersion)
    throw io::FormatError("'" + path + "': unsupported bundle version " + std::to_string(version));
  Dataset ds;
  const std::size_t n = r.u32("num_samples");
  ds.channels = r.u32("channels");
  ds.height = r.u32("height");
  ds.width = r.u32("width");
  ds.num_classes = r.u32("num_classes");
  if (ds.channels == 0 || ds.height == 0 || ds.width == 0) throw io::FormatError("'" + path + "': empty image geometry");
  for (std::size_t c = 0; c < ds.channels; ++c) ds.norm_mean.push_back(r.f64("norm_mean"));
  for (std::size_t c = 0; c < ds.channels; ++c) ds.norm_std.push_back(r.f64("norm_std"));
  const std::size_t per = ds.channels * ds.height * ds.width;
  r.need(n * per + 2 * n + n, "payload");
  std::vector<std::uint8_t> px(per);
  for (std::size_t i = 0; i < n; ++i) {
    r.bytes(px.data(), per, "pixels");
    Array im(Shape{ds.channels, ds.height, ds.width});
    for (std::size_t k = 0; k < per; ++k) im[k] = static_cast<double>(px[k]) / 255.0;
    ds.images.push_back(std::move(im));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = r.u16("labels");
    if (y >= ds.num_classes)
      throw IndexError("'" + path + "': label " + std::to_string(y) + " of sample " + std::to_string(i) +
                       " out of range for " + std::to_string(ds.num_classes) + " classes");
    ds.labels.push_back(y);
    ds.concept_tag.push_back(y);
  }
  for (std::size_t i = 0; i < n; ++i) ds.modality.push_back(r.u8("modality"));
  if (r.remaining() != 0)
    throw io::FormatError("'" + path + "': " + std::to_string(r.remaining()) + " trailing bytes after payload");

  if (labels_csv) {
    auto csv = detail::read_label_csv(*labels_csv);
    if (csv.labels.size() != n)
      throw io::FormatError("label/image count mismatch: '" + *labels_csv + "' has " + std::to_string(csv.labels.size()) +
                            " rows, bundle has " + std::to_string(n) + " images");
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<std::size_t>(csv.labels[i]) >= ds.num_classes)
        throw IndexError("'" + *labels_csv + "': label " + std::to_string(csv.labels[i]) + " out of range for " +
                         std::to_string(ds.num_classes) + " classes");
      if (csv.labels[i] != ds.labels[i])
        throw io::FormatError("'" + *labels_csv + "': label of sample " + std::to_string(i) + " disagrees with bundle");
    }
    ds.modality = csv.modality;
    ds.concept_tag = csv.concept_tag;
  }
  ds.validate();
  return ds;
}

/// Convert a flat u8 image file plus a label CSV (id,label[,modality,concept])
/// into a Dataset. Normalisation stats are computed over all samples.
inline Dataset import_raw(const std::string& pixels_path, const std::string& labels_csv, std::size_t channels,
                          std::size_t height, std::size_t width, std::size_t num_classes) {
  auto r = io::Reader::from_file(pixels_path);
  auto csv = detail::read_label_csv(labels_csv);
  const std::size_t per = channels * height * width;
  if (per == 0 || r.remaining() % per != 0)
    throw io::FormatError("'" + pixels_path + "': size is not a multiple of one image (" + std::to_string(per) + " bytes)");
  const std::size_t n = r.remaining() / per;
  if (csv.labels.size() != n)
    throw io::FormatError("label/image count mismatch: " + std::to_string(csv.labels.size()) + " labels, " +
                          std::to_string(n) + " images");
  Dataset ds;
  ds.channels = channels;
  ds.height = height;
  ds.width = width;
  ds.num_classes = num_classes;
  std::vector<std::uint8_t> px(per);
  for (std::size_t i = 0; i < n; ++i) {
    r.bytes(px.data(), per, "pixels");
    Array im(Shape{channels, height, width});
    for (std::size_t k = 0; k < per; ++k) im[k] = static_cast<double>(px[k]) / 255.0;
    ds.images.push_back(std::move(im));
    if (static_cast<std::size_t>(csv.labels[i]) >= num_classes)
      throw IndexError("label " + std::to_string(csv.labels[i]) + " out of range for " + std::to_string(num_classes) + " classes");
  }
  ds.labels = csv.labels;
  ds.modality = csv.modality;
  ds.concept_tag = csv.concept_tag;
  compute_norm_stats(ds);
  ds.validate();
  return ds;
}

}  // namespace nmask
