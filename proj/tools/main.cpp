#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "aen/config.h"
#include "aen/dataset.h"
#include "aen/error.h"
#include "aen/eval.h"
#include "aen/model.h"
#include "aen/rng.h"
#include "aen/train.h"
#include "aen/wav.h"

namespace {

using namespace aen;

struct CliOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 1;
  std::string manifest;
  bool synthetic = false;
  std::string out_dir;
  std::string cache_dir;
  std::string out_cache;
  std::string spec;
};

// Config file < --set overrides (in order) < dedicated flags.
RunConfig resolve_config(const CliOptions& opt) {
  RunConfig cfg;
  if (!opt.config_path.empty()) {
    cfg = load_run_config(opt.config_path);
  }
  for (const std::string& kv : opt.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects key=value, got \"" + kv + "\"");
    }
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opt.seed_given) {
    cfg.seed = opt.seed;
    cfg.normalize();
  }
  cfg.validate();
  return cfg;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << text;
  out.flush();
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

void echo_config(const RunConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_text_file(dir + "/resolved_config.json", run_config_json(cfg));
}

std::string format_accuracy(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", value);
  return buf;
}

// Loads whichever dataset the flags selected.  Synthetic corpora are built
// in memory; manifest corpora go through the feature cache.  Waveforms are
// kept so AWGN can re-extract features during training.
struct LoadedData {
  std::vector<Sample> samples;
  std::vector<std::string> label_names;
  bool synthetic = false;
};

LoadedData load_dataset(const CliOptions& opt, const RunConfig& cfg) {
  if (!opt.synthetic && opt.manifest.empty()) {
    throw ConfigError("pass --manifest PATH or --synthetic");
  }
  LoadedData data;
  if (opt.synthetic) {
    data.synthetic = true;
    const auto specs = cfg.synth.parse_classes();
    const auto waves = generate_synthetic(
        cfg.synth.n_per_class, specs, cfg.synth.sample_rate,
        {cfg.synth.duration_min, cfg.synth.duration_max}, cfg.seed);
    data.samples = samples_from_waveforms(waves, cfg.mel);
    data.label_names = synthetic_label_names(specs);
    return data;
  }
  const Manifest manifest = load_manifest(opt.manifest);
  const std::string cache =
      opt.cache_dir.empty() ? opt.out_dir + "/cache" : opt.cache_dir;
  FeatureBuildResult built =
      build_features(manifest, cfg.mel, cache, /*keep_waveforms=*/true,
                     opt.jobs);
  data.samples = std::move(built.samples);
  data.label_names = manifest.labels;
  return data;
}

int run_features(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  const Manifest manifest = load_manifest(opt.manifest);
  const FeatureBuildResult built =
      build_features(manifest, cfg.mel, opt.out_cache,
                     /*keep_waveforms=*/false, opt.jobs);
  echo_config(cfg, opt.out_cache);
  std::cout << built.samples.size() << " utterances, " << built.total_frames
            << " frames total\n"
            << "cache hits: " << built.cache_hits << "/"
            << built.samples.size() << "\n";
  return 0;
}

int run_crossval(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  std::filesystem::create_directories(opt.out_dir);
  const LoadedData data = load_dataset(opt, cfg);
  cfg.model.num_classes = static_cast<int>(data.label_names.size());

  const CrossValResult result =
      cross_validate(data.samples, cfg.model, cfg.train, cfg.augment, cfg.mel,
                     data.label_names, cfg.k, cfg.seed, opt.jobs);

  echo_config(cfg, opt.out_dir);
  write_text_file(opt.out_dir + "/fold_report.json",
                  fold_report_json(result.report, data.synthetic));
  for (std::size_t f = 0; f < result.report.folds.size(); ++f) {
    const std::string stem = opt.out_dir + "/fold" + std::to_string(f);
    write_text_file(stem + "_confusion.csv",
                    confusion_csv(result.report.folds[f].confusion,
                                  data.label_names));
    write_history_jsonl(result.histories[f], stem + "_history.jsonl");
    result.fold_models[f].save_weights(stem + ".best");
  }

  std::cout << "mean fold accuracy: "
            << format_accuracy(result.report.mean_accuracy) << " ("
            << (data.synthetic ? "synthetic" : "manifest") << " data)\n";
  return 0;
}

int run_ablate_kernels(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  std::filesystem::create_directories(opt.out_dir);
  const LoadedData data = load_dataset(opt, cfg);
  cfg.model.num_classes = static_cast<int>(data.label_names.size());

  const char* tag = data.synthetic ? "synthetic" : "manifest";
  std::string csv = "kernel,padding,params,mean_accuracy,data\n";
  for (int kernel : {3, 5, 7, 9, 11}) {
    RunConfig variant = cfg;
    variant.model.kernel_size = kernel;
    Rng rng(variant.seed);
    const ArabEmoNet model(variant.model, rng);
    const CrossValResult result = cross_validate(
        data.samples, variant.model, variant.train, variant.augment,
        variant.mel, data.label_names, variant.k, variant.seed, opt.jobs);
    csv += std::to_string(kernel) + "," +
           std::to_string(variant.model.padding()) + "," +
           std::to_string(model.count_params()) + "," +
           format_accuracy(result.report.mean_accuracy) + "," + tag + "\n";
  }

  echo_config(cfg, opt.out_dir);
  write_text_file(opt.out_dir + "/kernel_ablation.csv", csv);
  std::cout << csv;
  return 0;
}

int run_params(const CliOptions& opt) {
  const RunConfig cfg = resolve_config(opt);
  Rng rng(cfg.seed);
  const ArabEmoNet model(cfg.model, rng);
  for (const auto& [group, count] : model.param_breakdown()) {
    std::cout << group << " " << count << "\n";
  }
  std::cout << "total " << model.count_params() << "\n";
  return 0;
}

int run_synth(const CliOptions& opt) {
  RunConfig cfg = resolve_config(opt);
  if (!opt.spec.empty()) {
    apply_override(cfg, "synth.classes", opt.spec);
    cfg.validate();
  }
  const auto specs = cfg.synth.parse_classes();
  const auto names = synthetic_label_names(specs);
  const auto waves = generate_synthetic(
      cfg.synth.n_per_class, specs, cfg.synth.sample_rate,
      {cfg.synth.duration_min, cfg.synth.duration_max}, cfg.seed);

  std::filesystem::create_directories(opt.out_dir);
  std::string manifest = "path,label,speaker\n";
  std::vector<int> index_in_class(names.size(), 0);
  for (const auto& [wave, label] : waves) {
    char idx[16];
    std::snprintf(idx, sizeof idx, "%03d",
                  index_in_class[static_cast<std::size_t>(label)]++);
    const std::string name =
        names[static_cast<std::size_t>(label)] + "_" + idx + ".wav";
    write_wav_pcm16(opt.out_dir + "/" + name, wave);
    manifest += name + "," + names[static_cast<std::size_t>(label)] + ",\n";
  }
  write_text_file(opt.out_dir + "/manifest.csv", manifest);
  echo_config(cfg, opt.out_dir);
  std::cout << "wrote " << waves.size() << " WAV files and manifest.csv to "
            << opt.out_dir << "\n";
  return 0;
}

void add_config_flags(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--config", opt.config_path,
                  "JSON config file of flat dotted keys");
  cmd->add_option("--set", opt.sets,
                  "Override one config key, e.g. --set train.lr=0.001")
      ->take_all();
}

void add_seed_jobs(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--seed", opt.seed, "Random seed (overrides config)")
      ->each([&opt](const std::string&) { opt.seed_given = true; });
  cmd->add_option("--jobs", opt.jobs, "Worker threads (1 = deterministic order is still guaranteed; >1 only changes wall time)")
      ->check(CLI::PositiveNumber);
}

void add_data_flags(CLI::App* cmd, CliOptions& opt) {
  auto* manifest = cmd->add_option("--manifest", opt.manifest,
                                   "Manifest CSV of audio files");
  auto* synthetic = cmd->add_flag("--synthetic", opt.synthetic,
                                  "Use the built-in synthetic corpus");
  manifest->excludes(synthetic);
  synthetic->excludes(manifest);
  cmd->add_option("--cache", opt.cache_dir,
                  "Feature cache directory (manifest runs; default <out-dir>/cache)");
}

}  // namespace

int main(int argc, char** argv) {
  CliOptions opt;
  CLI::App app{"Speech emotion recognition pipeline: log-Mel features, "
               "CNN-BiLSTM-attention classifier, k-fold evaluation"};
  app.require_subcommand(1);

  CLI::App* features =
      app.add_subcommand("features", "Extract and cache log-Mel features");
  features->add_option("--manifest", opt.manifest, "Manifest CSV")->required();
  features->add_option("--out-cache", opt.out_cache, "Cache directory")
      ->required();
  add_config_flags(features, opt);
  add_seed_jobs(features, opt);

  CLI::App* crossval = app.add_subcommand(
      "crossval", "Stratified k-fold cross-validation with reports");
  add_data_flags(crossval, opt);
  crossval->add_option("--out-dir", opt.out_dir, "Report directory")
      ->required();
  add_config_flags(crossval, opt);
  add_seed_jobs(crossval, opt);

  CLI::App* ablate = app.add_subcommand(
      "ablate-kernels",
      "Cross-validate kernel sizes 3/5/7/9/11 and tabulate params/accuracy");
  add_data_flags(ablate, opt);
  ablate->add_option("--out-dir", opt.out_dir, "Report directory")->required();
  add_config_flags(ablate, opt);
  add_seed_jobs(ablate, opt);

  CLI::App* params = app.add_subcommand(
      "params", "Print the model's per-layer and total parameter counts");
  add_config_flags(params, opt);
  add_seed_jobs(params, opt);

  CLI::App* synth = app.add_subcommand(
      "synth", "Materialize the synthetic corpus as WAV files + manifest");
  synth->add_option("--out-dir", opt.out_dir, "Corpus directory")->required();
  synth->add_option("--spec", opt.spec,
                    "Class list name:carrier_hz:am_hz[,...] "
                    "(overrides synth.classes)");
  add_config_flags(synth, opt);
  add_seed_jobs(synth, opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems exit 1; --help exits 0
  }

  try {
    if (app.got_subcommand(features)) return run_features(opt);
    if (app.got_subcommand(crossval)) return run_crossval(opt);
    if (app.got_subcommand(ablate)) return run_ablate_kernels(opt);
    if (app.got_subcommand(params)) return run_params(opt);
    if (app.got_subcommand(synth)) return run_synth(opt);
    std::cerr << "no command selected\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
