#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aen/audio.h"
#include "aen/rng.h"

namespace aen {

// One manifest row: a playable audio file plus its string label and an
// optional speaker tag (carried through for future speaker-disjoint splits,
// unused by the fold logic).
struct ManifestEntry {
  std::string path;
  std::string label;
  std::string speaker;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  // Sorted label vocabulary; a label's integer id is its index here, so ids
  // are a pure function of the vocabulary.
  std::vector<std::string> labels;

  int label_id(const std::string& name) const;
};

// CSV with header "path,label,speaker" (any column order; names decide).
// Relative audio paths are resolved against the manifest's directory.
// Throws IoError (unreadable), FormatError (missing header columns, wrong
// field count, empty file), DataError (no data rows, duplicate path).
Manifest load_manifest(const std::string& path);

// A fully loaded utterance: features for the model, the waveform kept so
// noise augmentation can re-extract features, and bookkeeping fields.
struct Sample {
  LogMelSpectrogram features;
  int label = -1;
  Waveform waveform;  // empty when only cached features were available
  std::string path;
  std::string speaker;
};

struct FeatureBuildResult {
  std::vector<Sample> samples;
  int cache_hits = 0;
  int cache_misses = 0;
  std::int64_t total_frames = 0;
};

// Converts every manifest entry to log-Mel features, caching the result in
// cache_dir under a content hash of (audio bytes, mel config).  A warm run
// decodes the cached files and performs no spectrogram computation at all.
// Per-file failures are collected; if any file fails, a DataError listing
// every failing path is thrown after the scan.  keep_waveforms controls
// whether decoded audio is retained on the samples (needed for AWGN).
FeatureBuildResult build_features(const Manifest& manifest,
                                  const MelConfig& mel,
                                  const std::string& cache_dir,
                                  bool keep_waveforms = true, int jobs = 1);

// Feature-cache codec ("AEF1"): magic, u16 version, u32 n_mels, u32 frames,
// little-endian f32 payload, CRC32 trailer.  Caching quantizes features to
// f32, so cold paths also run decode(encode(x)) to make cache hits and
// misses bit-identical.  decode throws FormatError on corruption.
std::vector<std::uint8_t> encode_features(const LogMelSpectrogram& f);
LogMelSpectrogram decode_features(const std::vector<std::uint8_t>& bytes,
                                  const std::string& name_for_errors);

// Stable content hash of the audio bytes plus every mel setting, printed as
// 16 hex digits; any config change moves every entry to a new key.
std::string feature_cache_key(const std::vector<std::uint8_t>& audio_bytes,
                              const MelConfig& mel);

// One synthetic class: an amplitude-modulated sine, distinct per class.
struct SynthClassSpec {
  std::string name;
  double carrier_hz = 0.0;
  double am_hz = 0.0;
};

// Desk-scale stand-in corpus: for each class, n_per_class waveforms of the
// form 0.5*sin(2*pi*carrier*t) * (1 + 0.5*sin(2*pi*am*t)) plus N(0, 0.01)
// dither, with duration drawn uniformly from duration_range seconds.  Class
// ids follow the lexicographic order of class names.  Deterministic in
// (seed, class, index), independent of generation order.
// Throws ValueError on < 2 classes, duplicate specs, or bad ranges.
std::vector<std::pair<Waveform, int>> generate_synthetic(
    int n_per_class, const std::vector<SynthClassSpec>& class_specs,
    int sample_rate, std::pair<double, double> duration_range,
    std::uint64_t seed);

// Sorted class names for the same specs (the id -> name mapping).
std::vector<std::string> synthetic_label_names(
    const std::vector<SynthClassSpec>& class_specs);

// Runs the DSP front end over in-memory waveforms (no cache involved).
std::vector<Sample> samples_from_waveforms(
    const std::vector<std::pair<Waveform, int>>& waves, const MelConfig& mel,
    bool keep_waveforms = true);

}  // namespace aen
