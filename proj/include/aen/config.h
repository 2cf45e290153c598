#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aen/audio.h"
#include "aen/augment.h"
#include "aen/dataset.h"
#include "aen/model.h"
#include "aen/train.h"

namespace aen {

// Settings for the built-in synthetic corpus (used by `--synthetic` runs and
// the synth command).  The class list is a compact "name:carrier_hz:am_hz"
// comma list so it fits one config value / CLI override.
struct SynthConfig {
  int n_per_class = 20;
  int sample_rate = 16000;
  double duration_min = 0.25;
  double duration_max = 0.5;
  std::string classes = "class_a:300:2,class_b:1200:8,class_c:2800:4";

  std::vector<SynthClassSpec> parse_classes() const;  // throws ConfigError
  void validate() const;                              // throws ConfigError
};

// The complete, self-contained description of a run.  Serialized as a flat
// JSON object with dotted keys ("model.kernel_size": 7); the emitted
// resolved_config.json holds every key, so it alone reproduces a run.
//
// Two fields are derived rather than configurable: model.n_mels always
// mirrors mel.n_mels, and train.seed always mirrors the global seed (apply
// normalize() after mutating either source).  model.num_classes acts as a
// default; commands that load a dataset overwrite it with the actual label
// count.
struct RunConfig {
  MelConfig mel;
  AugmentConfig augment;
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  int k = 5;            // cross-validation folds
  std::uint64_t seed = 0;

  void normalize();        // re-derives the mirrored fields
  void validate() const;   // throws ConfigError; call after normalize()
};

// Reads a flat-key JSON object.  Unknown keys, wrong value types, and
// malformed JSON all throw ConfigError naming the offender.
RunConfig load_run_config(const std::string& path);

// Applies one "--set key=value" override.  The value is parsed as a JSON
// literal (numbers, booleans, arrays); anything unparseable is taken as a
// plain string, so `--set synth.classes=a:200:2,b:900:5` needs no quoting.
void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& value);

// Every key in its canonical order, as pretty-printed JSON (trailing
// newline).  Deterministic: equal configs serialize to equal bytes.
std::string run_config_json(const RunConfig& cfg);

}  // namespace aen
