#pragma once

// Plain-text run configuration.
//
//   # comment
//   [train]
//   epochs = 15
//   mask.kind = policy      # dotted keys work anywhere
//
// Every key has a registered default; unknown keys are errors. A run
// manifest is the fully resolved key set in the same format, so it can be
// fed back as --config.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nmask/data.hpp"
#include "nmask/histogram.hpp"
#include "nmask/mask.hpp"
#include "nmask/networks.hpp"
#include "nmask/probes.hpp"
#include "nmask/training.hpp"

namespace nmask {

struct KeyDoc {
  const char* key;
  const char* default_value;
  const char* doc;
};

inline const std::vector<KeyDoc>& config_keys() {
  static const std::vector<KeyDoc> keys{
      {"data.path", "", "dataset bundle (NMDS)"},
      {"data.labels", "", "optional label CSV sidecar overriding bundle labels"},
      {"data.split_seed", "0", "seed of the stratified train/val/test split"},
      {"data.train_frac", "0.7", "train fraction"},
      {"data.val_frac", "0.15", "validation fraction"},
      {"data.test_frac", "0.15", "test fraction"},
      {"data.flip_prob", "0.5", "horizontal flip probability (training only)"},
      {"data.crop_pad", "2", "pad-and-random-crop padding in pixels (training only)"},
      {"data.synth_modalities", "3", "gen-synth: number of modalities"},
      {"data.synth_classes_per_modality", "4", "gen-synth: shape classes per modality"},
      {"data.synth_samples_per_class", "50", "gen-synth: samples per class"},
      {"data.synth_image_size", "28", "gen-synth: image side length"},
      {"model.classifier_widths", "8,16,32", "classifier conv widths"},
      {"model.classifier_strides", "1,2,2", "classifier conv strides"},
      {"model.policy_widths", "4,8", "policy feature-extractor conv widths"},
      {"model.policy_strides", "2,2", "policy feature-extractor conv strides"},
      {"model.policy_zero_head", "true", "zero-initialise the policy projection head (Beta(1,1) at step zero)"},
      {"mask.kind", "policy", "mask source: policy|gaussian|uniform|pure|none"},
      {"mask.noise_h", "8", "noise matrix height"},
      {"mask.noise_w", "8", "noise matrix width"},
      {"mask.upsample", "nearest", "upsampling: nearest|bilinear"},
      {"mask.blur", "true", "blur the upsampled mask"},
      {"mask.blur_kernel", "13", "Gaussian blur kernel size K (odd)"},
      {"mask.blur_sigma", "6", "Gaussian blur sigma S"},
      {"mask.tau_i", "0.9", "image-level EMA coefficient"},
      {"mask.tau_d", "0.99", "dataset-level EMA coefficient"},
      {"train.seed", "0", "root seed (init, shuffling, augmentation, masks, trials)"},
      {"train.epochs", "15", "pretraining epochs"},
      {"train.finetune_epochs", "10", "fine-tuning / baseline epochs"},
      {"train.batch_size", "32", "batch size"},
      {"train.lr_classifier", "0.05", "classifier base learning rate"},
      {"train.lr_policy", "0.01", "policy base learning rate"},
      {"train.momentum", "0.9", "SGD momentum"},
      {"train.weight_decay", "1e-4", "SGD weight decay"},
      {"train.schedule_classifier", "step", "classifier schedule: step|cosine|constant"},
      {"train.step_period", "5", "step schedule period (epochs)"},
      {"train.step_factor", "0.1", "step schedule factor"},
      {"train.schedule_policy", "cosine", "policy schedule: step|cosine|constant"},
      {"train.reduction", "logsumexp", "REINFORCE reduction: logsumexp|sum"},
      {"train.combined_loss", "false", "backpropagate the single REINFORCE-weighted loss into both networks"},
      {"train.divergence_guard", "1000", "abort when the mean loss exceeds this or is non-finite"},
      {"train.patience", "0", "early stopping on validation accuracy (0 disables)"},
      {"train.threads", "1", "worker threads (computation is single-threaded)"},
      {"eval.probe_hidden", "256", "MLP probe hidden width"},
      {"eval.probe_lr", "0.001", "MLP probe AdamW learning rate"},
      {"eval.probe_weight_decay", "0.01", "MLP probe AdamW weight decay"},
      {"eval.probe_patience", "5", "MLP probe early-stopping patience (epochs)"},
      {"eval.probe_max_epochs", "200", "MLP probe epoch cap"},
      {"eval.probe_trials", "0", "MLP probe trials (0: 7/3/1 by training-set size)"},
      {"eval.lowshot_shots", "8,16,32,64,128,256", "low-shot samples per class"},
      {"eval.lowshot_trials", "10", "low-shot trials per shot"},
      {"eval.logreg_l2", "1.0", "logistic-regression L2 strength"},
      {"eval.logreg_tol", "1e-6", "logistic-regression gradient tolerance"},
      {"eval.hist_bins", "64", "histogram bins on [0,1]"},
      {"eval.hist_split", "val", "split used by the histogram report"},
  };
  return keys;
}

/// Key listing for --help.
inline std::string config_help() {
  std::ostringstream os;
  os << "Configuration keys (KEY=DEFAULT  description):\n";
  for (const auto& k : config_keys())
    os << "  " << k.key << '=' << k.default_value << "  " << k.doc << '\n';
  return os.str();
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.key] = k.default_value;
  }

  static bool known(const std::string& key) {
    const auto& ks = config_keys();
    return std::any_of(ks.begin(), ks.end(), [&](const KeyDoc& k) { return key == k.key; });
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown configuration key '" + key + "'");
    values_[key] = value;
  }

  /// "key=value" as given on the command line.
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
    set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config '" + path + "'");
    std::string line, section;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed section header");
        section = detail::trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = detail::trim(line.substr(0, eq));
      if (key.find('.') == std::string::npos && !section.empty()) key = section + "." + key;
      if (!known(key)) throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown configuration key '" + key + "'");
      values_[key] = detail::trim(line.substr(eq + 1));
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    return it->second;
  }

  double num(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
  }

  std::uint64_t u64(const std::string& key) const {
    const auto& s = str(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" + s + "'");
    return v;
  }

  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("key '" + key + "': expected true|false, got '" + s + "'");
  }

  std::vector<std::size_t> sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : detail::split_list(str(key))) {
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || p != item.data() + item.size())
        throw ConfigError("key '" + key + "': expected a comma-separated integer list, got '" + str(key) + "'");
      out.push_back(v);
    }
    return out;
  }

  /// Resolved configuration in config-file syntax, grouped by section.
  std::string manifest(const std::vector<std::pair<std::string, std::string>>& header = {}) const {
    std::ostringstream os;
    for (const auto& [k, v] : header) os << "# " << k << '=' << v << '\n';
    std::string section;
    for (const auto& k : config_keys()) {
      const std::string key = k.key;
      const auto dot = key.find('.');
      const std::string sec = key.substr(0, dot);
      if (sec != section) {
        os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
        section = sec;
      }
      os << key.substr(dot + 1) << " = " << values_.at(key) << '\n';
    }
    return os.str();
  }

  void write_manifest(const std::string& path, const std::vector<std::pair<std::string, std::string>>& header = {}) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest '" + path + "'");
    out << manifest(header);
  }

  // --- typed views ---------------------------------------------------------

  MaskConfig mask_config() const {
    MaskConfig m;
    m.noise_h = size("mask.noise_h");
    m.noise_w = size("mask.noise_w");
    m.upsample = parse_upsample_mode(str("mask.upsample"));
    m.enable_blur = flag("mask.blur");
    m.blur_kernel = size("mask.blur_kernel");
    m.blur_sigma = num("mask.blur_sigma");
    return m;
  }

  Augment augment() const { return Augment{num("data.flip_prob"), size("data.crop_pad")}; }

  SplitFractions fractions() const { return {num("data.train_frac"), num("data.val_frac"), num("data.test_frac")}; }

  SynthSpec synth_spec(std::uint64_t seed) const {
    SynthSpec s;
    s.num_modalities = size("data.synth_modalities");
    s.classes_per_modality = size("data.synth_classes_per_modality");
    s.samples_per_class = size("data.synth_samples_per_class");
    s.image_size = size("data.synth_image_size");
    s.seed = seed;
    return s;
  }

  ClassifierSpec classifier_spec(const Dataset& ds) const {
    ClassifierSpec c;
    c.body = ConvStackSpec{ds.channels, ds.height, ds.width, sizes("model.classifier_widths"),
                           sizes("model.classifier_strides")};
    c.num_classes = ds.num_classes;
    return c;
  }

  PolicySpec policy_spec(const Dataset& ds) const {
    PolicySpec p;
    p.body = ConvStackSpec{ds.channels, ds.height, ds.width, sizes("model.policy_widths"), sizes("model.policy_strides")};
    p.noise_h = size("mask.noise_h");
    p.noise_w = size("mask.noise_w");
    p.zero_head = flag("model.policy_zero_head");
    return p;
  }

  /// Pretraining config; `finetune` selects the fine-tuning epoch count.
  TrainConfig train_config(bool finetune = false) const {
    TrainConfig t;
    t.epochs = size(finetune ? "train.finetune_epochs" : "train.epochs");
    t.batch_size = size("train.batch_size");
    t.lr_classifier = num("train.lr_classifier");
    t.lr_policy = num("train.lr_policy");
    t.momentum = num("train.momentum");
    t.weight_decay = num("train.weight_decay");
    t.schedule_classifier = Schedule{parse_schedule(str("train.schedule_classifier")), size("train.step_period"),
                                     num("train.step_factor")};
    t.schedule_policy = Schedule{parse_schedule(str("train.schedule_policy")), size("train.step_period"),
                                 num("train.step_factor")};
    t.reduction = parse_reduction(str("train.reduction"));
    t.combined_loss = flag("train.combined_loss");
    t.seed = u64("train.seed");
    t.divergence_guard = num("train.divergence_guard");
    t.patience = size("train.patience");
    t.augment = augment();
    t.mask = parse_mask_mode(str("mask.kind"));
    t.mask_cfg = mask_config();
    t.tau_i = num("mask.tau_i");
    t.tau_d = num("mask.tau_d");
    t.validate();
    return t;
  }

  ProbeConfig probe_config() const {
    ProbeConfig p;
    p.hidden = size("eval.probe_hidden");
    p.lr = num("eval.probe_lr");
    p.weight_decay = num("eval.probe_weight_decay");
    p.patience = size("eval.probe_patience");
    p.max_epochs = size("eval.probe_max_epochs");
    p.trials = size("eval.probe_trials");
    p.batch_size = size("train.batch_size");
    return p;
  }

  LowShotConfig lowshot_config() const {
    LowShotConfig l;
    l.shots = sizes("eval.lowshot_shots");
    l.trials = size("eval.lowshot_trials");
    l.logreg.l2 = num("eval.logreg_l2");
    l.logreg.tol = num("eval.logreg_tol");
    return l;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace nmask
