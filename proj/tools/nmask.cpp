// nmask: noise-mask pretraining pipeline driver.
//
// Exit codes: 0 success, 1 configuration error, 2 numerical divergence,
// 3 I/O or data-integrity error.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nmask/nmask.hpp"

namespace fs = std::filesystem;
using namespace nmask;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string init;
  std::optional<std::size_t> threads;
  std::string reduction;
  std::string mask;
  std::string data;
  std::vector<std::string> sets;
  // subcommand specific
  std::string scores;
  std::string split = "test";
  std::size_t gradcheck_seeds = 20;
  std::string pixels, labels;
  std::size_t channels = 1, height = 28, width = 28, classes = 0;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg;
  if (!o.config.empty()) cfg.load_file(o.config);
  for (const auto& kv : o.sets) cfg.set_assignment(kv);
  if (o.seed) cfg.set("train.seed", std::to_string(*o.seed));
  if (o.threads) {
    if (*o.threads == 0) throw ConfigError("--threads must be positive");
    cfg.set("train.threads", std::to_string(*o.threads));
  }
  if (!o.reduction.empty()) cfg.set("train.reduction", o.reduction);
  if (!o.mask.empty()) cfg.set("mask.kind", o.mask);
  if (!o.data.empty()) cfg.set("data.path", o.data);
  // Validate every typed view up front so bad values fail before any work.
  cfg.train_config();
  cfg.mask_config();
  cfg.probe_config();
  cfg.lowshot_config();
  cfg.fractions().validate();
  return cfg;
}

std::string require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  return o.out;
}

std::string out_dir(const Options& o) {
  const auto dir = require_out(o);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  return dir;
}

void manifest(const RunConfig& cfg, const std::string& path, const std::string& command, const Options& o) {
  std::vector<std::pair<std::string, std::string>> header{{"command", command}};
  if (!o.init.empty()) header.emplace_back("init", o.init);
  cfg.write_manifest(path, header);
}

Dataset load_split(const RunConfig& cfg) {
  const auto& path = cfg.str("data.path");
  if (path.empty()) throw ConfigError("data.path is not set (use --data or data.path)");
  const auto& labels = cfg.str("data.labels");
  Dataset ds = load_dataset(path, labels.empty() ? std::nullopt : std::optional<std::string>(labels));
  stratified_split(ds, cfg.fractions(), cfg.u64("data.split_seed"));
  return ds;
}

Checkpoint load_init(const Options& o) {
  if (o.init.empty()) throw ConfigError("--init is required");
  return load_checkpoint(o.init);
}

void print_epoch(const EpochRecord& r) {
  std::cerr << "epoch " << r.epoch << "  val loss " << std::fixed << std::setprecision(4) << r.loss << "  acc "
            << r.accuracy << "  macro-F1 " << r.macro_f1 << "  mask " << r.mask_mean << " +- " << r.mask_std << '\n'
            << std::defaultfloat;
}

void write_split_metrics(const ClassifierNet& net, const Dataset& ds, const std::string& dir) {
  write_metrics_csv(dir + "/metrics.csv", evaluate_classifier(net, ds, ds.indices(Split::val)).report);
  const auto te = ds.indices(Split::test);
  if (!te.empty()) write_metrics_csv(dir + "/test_metrics.csv", evaluate_classifier(net, ds, te).report);
}

// --- subcommands -----------------------------------------------------------

int cmd_gen_synth(const Options& o) {
  const RunConfig cfg = resolve(o);
  const auto out = require_out(o);
  manifest(cfg, out + ".manifest", "gen-synth", o);
  Dataset ds = synth_generate(cfg.synth_spec(cfg.u64("train.seed")));
  stratified_split(ds, cfg.fractions(), cfg.u64("data.split_seed"));
  compute_norm_stats(ds);
  write_bundle(out, ds);
  write_label_csv(out + ".labels.csv", ds);
  std::cout << "wrote " << out << " (" << ds.size() << " images, " << ds.num_classes << " classes, hash "
            << std::hex << ds.hash() << std::dec << ")\n";
  return 0;
}

int cmd_import_raw(const Options& o) {
  const RunConfig cfg = resolve(o);
  const auto out = require_out(o);
  if (o.pixels.empty() || o.labels.empty()) throw ConfigError("--pixels and --labels are required");
  if (o.classes == 0) throw ConfigError("--classes must be positive");
  manifest(cfg, out + ".manifest", "import-raw", o);
  Dataset ds = import_raw(o.pixels, o.labels, o.channels, o.height, o.width, o.classes);
  stratified_split(ds, cfg.fractions(), cfg.u64("data.split_seed"));
  compute_norm_stats(ds);
  write_bundle(out, ds);
  std::cout << "wrote " << out << " (" << ds.size() << " images)\n";
  return 0;
}

int cmd_pretrain(const Options& o) {
  const RunConfig cfg = resolve(o);
  const auto dir = out_dir(o);
  manifest(cfg, dir + "/manifest.txt", "pretrain", o);
  const Dataset ds = load_split(cfg);
  const auto res = run_pretraining(ds, cfg.classifier_spec(ds), cfg.policy_spec(ds), cfg.train_config(), print_epoch);
  save_checkpoint(dir + "/heated.nmck", res.heated);
  save_checkpoint(dir + "/best.nmck", res.best);
  write_history_csv(dir + "/history.csv", res.state.history, Split::val);
  write_history_csv(dir + "/train_history.csv", res.state.history, Split::train);
  write_split_metrics(res.state.classifier, ds, dir);
  std::cout << "heated checkpoint: " << dir << "/heated.nmck\n";
  return 0;
}

int cmd_supervised(const Options& o, bool from_init) {
  const RunConfig cfg = resolve(o);
  const auto dir = out_dir(o);
  manifest(cfg, dir + "/manifest.txt", from_init ? "finetune" : "train-baseline", o);
  const Dataset ds = load_split(cfg);
  const TrainConfig tc = cfg.train_config(true);
  const auto res = from_init ? finetune(load_init(o), ds, tc, print_epoch)
                             : train_baseline(cfg.classifier_spec(ds), ds, tc, print_epoch);
  Checkpoint ck;
  ck.classifier = res.model;
  ck.epoch = tc.epochs;
  save_checkpoint(dir + "/model.nmck", ck);
  write_history_csv(dir + "/history.csv", res.history, Split::val);
  write_history_csv(dir + "/train_history.csv", res.history, Split::train);
  write_split_metrics(res.model, ds, dir);
  std::cout << "validation macro-F1 " << res.final_val.report.macro_f1 << '\n';
  return 0;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train|val|test)");
}

// CSV: header line, then label,score_0,...,score_{C-1} per row.
std::pair<Array, std::vector<int>> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read scores '" + path + "'");
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    bool first = true;
    while (std::getline(ss, cell, ',')) {
      try {
        if (first) labels.push_back(std::stoi(cell));
        else row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw io::FormatError("'" + path + "' line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
      first = false;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw io::FormatError("'" + path + "' line " + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().empty()) throw io::FormatError("'" + path + "': no score rows");
  Array a(Shape{rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), a.data().begin() + static_cast<std::ptrdiff_t>(i * rows[i].size()));
  return {a, labels};
}

int cmd_evaluate(const Options& o) {
  const RunConfig cfg = resolve(o);
  const auto dir = out_dir(o);
  manifest(cfg, dir + "/manifest.txt", "evaluate", o);
  MetricsReport rep;
  if (!o.scores.empty()) {
    auto [scores, labels] = read_scores(o.scores);
    rep = compute_metrics(scores, labels);
  } else {
    const Dataset ds = load_split(cfg);
    const auto ck = load_init(o);
    if (ck.classifier.spec().num_classes != ds.num_classes) throw ConfigError("checkpoint/dataset class-count mismatch");
    rep = evaluate_classifier(ck.classifier, ds, ds.indices(parse_split(o.split))).report;
  }
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  write_metrics_csv(dir + "/metrics.csv", rep);
  std::cout << "macro-F1 " << rep.macro_f1 << "  balanced accuracy " << rep.balanced_accuracy << "  AUROC "
            << (rep.auroc_defined ? std::to_string(rep.auroc_macro_ovr) : std::string("undefined")) << '\n';
  return 0;
}

struct FeatureSet {
  Array x;
  std::vector<int> labels;
  std::vector<Split> splits;
  std::size_t classes;
};

FeatureSet features_from(const Options& o, const RunConfig& cfg) {
  const Dataset ds = load_split(cfg);
  const auto ck = load_init(o);
  if (ck.classifier.spec().body.in_channels != ds.channels || ck.classifier.spec().body.height != ds.height ||
      ck.classifier.spec().body.width != ds.width)
    throw ConfigError("checkpoint input geometry does not match dataset '" + cfg.str("data.path") + "'");
  return {extract_features(ck.classifier, ds), ds.labels, ds.split, ds.num_classes};
}

int cmd_probe(const Options& o) {
  const RunConfig cfg = resolve(o);
  const auto dir = out_dir(o);
  manifest(cfg, dir + "/manifest.txt", "probe", o);
  const auto f = features_from(o, cfg);
  const auto res = mlp_probe(f.x, f.labels, f.splits, f.classes, cfg.u64("train.seed"), cfg.probe_config());
  std::ofstream out(dir + "/probe.csv");
  if (!out) throw IoError("cannot write '" + dir + "/probe.csv'");
  out << std::setprecision(17)
      << "trial,macro_precision,macro_recall,macro_f1,auroc_macro_ovr,balanced_accuracy,accuracy\n";
  for (std::size_t t = 0; t < res.trials.size(); ++t) {
    const auto& r = res.trials[t];
    out << t << ',' << r.macro_precision << ',' << r.macro_recall << ',' << r.macro_f1 << ','
        << (r.auroc_defined ? std::to_string(r.auroc_macro_ovr) : std::string("undefined")) << ','
        << r.balanced_accuracy << ',' << r.accuracy << '\n';
  }
  std::ofstream sum(dir + "/probe_summary.txt");
  sum << "trials=" << res.trials.size() << "\nmacro_f1_mean=" << res.macro_f1.mean
      << "\nmacro_f1_ci95=" << res.macro_f1.half_width << "\naccuracy_mean=" << res.accuracy.mean
      << "\naccuracy_ci95=" << res.accuracy.half_width << '\n';
  std::cout << "probe macro-F1 " << res.macro_f1.mean << " +- " << res.macro_f1.half_width << " over "
            << res.trials.size() << " trials\n";
  return 0;
}

int cmd_lowshot(const Options& o) {
  const RunConfig cfg = resolve(o);
  const auto dir = out_dir(o);
  manifest(cfg, dir + "/manifest.txt", "lowshot", o);
  const auto f = features_from(o, cfg);
  const auto curve = lowshot_eval(f.x, f.labels, f.splits, f.classes, cfg.u64("train.seed"), cfg.lowshot_config());
  for (const auto& w : curve.warnings) std::cerr << "warning: " << w << '\n';
  std::ofstream out(dir + "/lowshot.csv");
  if (!out) throw IoError("cannot write '" + dir + "/lowshot.csv'");
  out << std::setprecision(17) << "shots,trials,mean_macro_f1,ci95_macro_f1,mean_accuracy,ci95_accuracy\n";
  for (const auto& p : curve.points)
    out << p.shots << ',' << p.macro_f1.n << ',' << p.macro_f1.mean << ',' << p.macro_f1.half_width << ','
        << p.accuracy.mean << ',' << p.accuracy.half_width << '\n';
  std::cout << "low-shot points " << curve.points.size() << ", Spearman rho " << curve.spearman_rho << '\n';
  return 0;
}

int cmd_histograms(const Options& o) {
  const RunConfig cfg = resolve(o);
  const auto dir = out_dir(o);
  manifest(cfg, dir + "/manifest.txt", "histograms", o);
  const Dataset ds = load_split(cfg);
  const auto ck = load_init(o);
  const TrainConfig tc = cfg.train_config();
  if (tc.mask == MaskMode::policy && (!ck.policy || !ck.ema))
    throw ConfigError("mask.kind=policy needs a pretraining checkpoint with a policy (--init)");
  const PolicyNet policy = ck.policy ? *ck.policy : PolicyNet{};
  const EmaState ema = ck.ema ? *ck.ema : EmaState::zeros(tc.mask_cfg.noise_h, tc.mask_cfg.noise_w);
  const auto idx = ds.indices(parse_split(cfg.str("eval.hist_split")));
  const auto masks =
      eval_masks(policy, ema, ds, idx, tc.mask, tc.mask_cfg, component_rng(tc.seed, Component::masks).split(0xfeed));
  std::vector<Array> images;
  std::vector<std::uint8_t> mod;
  for (auto i : idx) {
    images.push_back(ds.images[i]);
    mod.push_back(ds.modality.empty() ? 0 : ds.modality[i]);
  }
  const auto rep = histogram_report(images, masks, mod, idx, cfg.size("eval.hist_bins"));
  write_histogram_csv(dir + "/histograms.csv", rep);
  write_histogram_summary(dir + "/histogram_summary.txt", rep);
  std::cout << "modality-mean dispersion: original " << rep.dispersion_original << ", masked "
            << rep.dispersion_masked << '\n';
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const RunConfig cfg = resolve(o);
  std::optional<std::string> dir;
  if (!o.out.empty()) {
    dir = out_dir(o);
    manifest(cfg, *dir + "/manifest.txt", "gradcheck", o);
  }
  constexpr double kTol = 1e-5;
  const auto entries = run_grad_suite(o.gradcheck_seeds, cfg.u64("train.seed"));
  bool ok = true;
  std::ostringstream csv;
  csv << "op,seeds,checked,skipped,max_rel_error,pass\n" << std::setprecision(6);
  for (const auto& e : entries) {
    const bool pass = e.max_rel_error < kTol;
    ok = ok && pass;
    std::cout << std::left << std::setw(22) << e.name << " max rel err " << std::scientific << std::setprecision(3)
              << e.max_rel_error << std::defaultfloat << "  (" << e.checked << " coords, " << e.skipped
              << " at kinks)  " << (pass ? "ok" : "FAIL") << '\n';
    csv << e.name << ',' << e.seeds << ',' << e.checked << ',' << e.skipped << ',' << e.max_rel_error << ','
        << (pass ? 1 : 0) << '\n';
  }
  if (dir) {
    std::ofstream out(*dir + "/gradcheck.csv");
    out << csv.str();
  }
  if (!ok) {
    std::cerr << "gradient check failed (tolerance " << kTol << ")\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nmask: policy-gradient noise-mask pretraining"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key=value config file");
    sub->add_option("--seed", o.seed, "root seed (train.seed)");
    sub->add_option("--out", o.out, "output path (directory; bundle file for gen-synth/import-raw)");
    sub->add_option("--threads", o.threads, "worker threads; 1 guarantees bitwise reproduction");
    sub->add_option("--set", o.sets, "override a key: --set train.epochs=3 (repeatable)");
    sub->footer(config_help());
  };
  auto with_data = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "dataset bundle (data.path)");
  };
  auto with_init = [&](CLI::App* sub, const char* what) { sub->add_option("--init", o.init, what); };
  auto with_training = [&](CLI::App* sub) {
    sub->add_option("--reduction", o.reduction, "REINFORCE reduction (train.reduction)")
        ->check(CLI::IsMember({"logsumexp", "sum"}));
    sub->add_option("--mask", o.mask, "mask source (mask.kind)")
        ->check(CLI::IsMember({"policy", "gaussian", "uniform", "pure", "none"}));
  };

  auto* gen = app.add_subcommand("gen-synth", "generate the synthetic multi-modality dataset bundle");
  common(gen);
  auto* imp = app.add_subcommand("import-raw", "convert raw u8 images + label CSV into a bundle");
  common(imp);
  imp->add_option("--pixels", o.pixels, "flat u8 image file (N*C*H*W bytes)");
  imp->add_option("--labels", o.labels, "CSV id,label[,modality,concept]");
  imp->add_option("--channels", o.channels, "channels")->capture_default_str();
  imp->add_option("--height", o.height, "height")->capture_default_str();
  imp->add_option("--width", o.width, "width")->capture_default_str();
  imp->add_option("--classes", o.classes, "number of classes");
  auto* pre = app.add_subcommand("pretrain", "noise-mask pretraining -> heated checkpoint");
  common(pre);
  with_data(pre);
  with_training(pre);
  auto* ft = app.add_subcommand("finetune", "supervised fine-tuning from a checkpoint");
  common(ft);
  with_data(ft);
  with_init(ft, "checkpoint to fine-tune (e.g. heated.nmck)");
  auto* base = app.add_subcommand("train-baseline", "supervised training from random init");
  common(base);
  with_data(base);
  auto* ev = app.add_subcommand("evaluate", "metrics CSV for a checkpoint or a score file");
  common(ev);
  with_data(ev);
  with_init(ev, "checkpoint to evaluate");
  ev->add_option("--scores", o.scores, "CSV label,score_0,... instead of a checkpoint");
  ev->add_option("--split", o.split, "split to evaluate")->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  auto* pr = app.add_subcommand("probe", "MLP probe on frozen features");
  common(pr);
  with_data(pr);
  with_init(pr, "backbone checkpoint");
  auto* ls = app.add_subcommand("lowshot", "logistic-regression low-shot curve on frozen features");
  common(ls);
  with_data(ls);
  with_init(ls, "backbone checkpoint");
  auto* hi = app.add_subcommand("histograms", "intensity histograms of original / masked images and masks");
  common(hi);
  with_data(hi);
  with_init(hi, "pretraining checkpoint (policy + EMA)");
  hi->add_option("--mask", o.mask, "mask source (mask.kind)")
      ->check(CLI::IsMember({"policy", "gaussian", "uniform", "pure", "none"}));
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  common(gc);
  gc->add_option("--seeds", o.gradcheck_seeds, "random seeds per case")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return cmd_gen_synth(o);
    if (*imp) return cmd_import_raw(o);
    if (*pre) return cmd_pretrain(o);
    if (*ft) return cmd_supervised(o, true);
    if (*base) return cmd_supervised(o, false);
    if (*ev) return cmd_evaluate(o);
    if (*pr) return cmd_probe(o);
    if (*ls) return cmd_lowshot(o);
    if (*hi) return cmd_histograms(o);
    if (*gc) return cmd_gradcheck(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const IndexError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
