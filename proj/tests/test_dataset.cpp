#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "aen/audio.h"
#include "aen/dataset.h"
#include "aen/error.h"
#include "aen/rng.h"
#include "aen/wav.h"
#include "support/tempdir.h"

using namespace aen;
using testsupport::TempDir;

namespace {

// Mel settings small enough to keep DSP in the tests instant.
MelConfig small_mel() {
  MelConfig mel;
  mel.n_fft = 256;
  mel.hop = 64;
  mel.n_mels = 16;
  mel.f_min = 50.0;
  mel.f_max = 3500.0;
  return mel;
}

Waveform sine(double hz, double seconds, int sr) {
  Waveform w;
  w.sample_rate = sr;
  const auto n = static_cast<std::size_t>(seconds * sr);
  w.samples.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    w.samples[t] =
        0.5 * std::sin(2.0 * 3.14159265358979323846 * hz * t / sr);
  }
  return w;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(static_cast<bool>(out));
  out << text;
}

}  // namespace

TEST_CASE("manifest parsing, label ids, and path resolution") {
  TempDir tmp;
  write_wav_pcm16(tmp.file("a.wav"), sine(440, 0.1, 8000));
  write_wav_pcm16(tmp.file("b.wav"), sine(880, 0.1, 8000));
  write_text(tmp.file("m.csv"),
             "path,label,speaker\n"
             "a.wav,sad,spk1\n"
             "b.wav,happy,\n");

  const Manifest m = load_manifest(tmp.file("m.csv"));
  REQUIRE(m.entries.size() == 2);
  // Lexicographic vocabulary: happy before sad.
  CHECK(m.labels == std::vector<std::string>{"happy", "sad"});
  CHECK(m.label_id("happy") == 0);
  CHECK(m.label_id("sad") == 1);
  CHECK_THROWS_AS(m.label_id("angry"), DataError);
  // Relative paths resolve against the manifest directory.
  CHECK(m.entries[0].path == tmp.file("a.wav"));
  CHECK(m.entries[1].speaker == "");
  CHECK(m.entries[0].speaker == "spk1");
}

TEST_CASE("manifest columns are matched by header name, not position") {
  TempDir tmp;
  write_text(tmp.file("m.csv"),
             "label,speaker,path\n"
             "happy,spk9,x.wav\n"
             "sad,,y.wav\n");
  const Manifest m = load_manifest(tmp.file("m.csv"));
  CHECK(m.entries[0].label == "happy");
  CHECK(m.entries[0].speaker == "spk9");
  CHECK(m.entries[0].path == tmp.file("x.wav"));
  CHECK(m.entries[1].label == "sad");
}

TEST_CASE("manifest error cases") {
  TempDir tmp;
  CHECK_THROWS_AS(load_manifest(tmp.file("missing.csv")), IoError);

  write_text(tmp.file("empty.csv"), "");
  CHECK_THROWS_AS(load_manifest(tmp.file("empty.csv")), FormatError);

  write_text(tmp.file("nocol.csv"), "path,label\nx.wav,happy\n");
  CHECK_THROWS_AS(load_manifest(tmp.file("nocol.csv")), FormatError);

  write_text(tmp.file("unknown.csv"),
             "path,label,speaker,extra\nx.wav,h,s,e\n");
  CHECK_THROWS_AS(load_manifest(tmp.file("unknown.csv")), FormatError);

  write_text(tmp.file("short.csv"), "path,label,speaker\nx.wav,happy\n");
  CHECK_THROWS_AS(load_manifest(tmp.file("short.csv")), FormatError);

  write_text(tmp.file("headonly.csv"), "path,label,speaker\n");
  CHECK_THROWS_AS(load_manifest(tmp.file("headonly.csv")), DataError);

  write_text(tmp.file("dup.csv"),
             "path,label,speaker\nsame.wav,a,\nsame.wav,b,\n");
  try {
    load_manifest(tmp.file("dup.csv"));
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("same.wav") != std::string::npos);
  }
}

TEST_CASE("feature building caches: cold computes, warm decodes only") {
  TempDir tmp;
  const MelConfig mel = small_mel();
  write_wav_pcm16(tmp.file("a.wav"), sine(440, 0.2, 8000));
  write_wav_pcm16(tmp.file("b.wav"), sine(900, 0.15, 8000));
  write_text(tmp.file("m.csv"),
             "path,label,speaker\na.wav,x,\nb.wav,y,\n");
  const Manifest m = load_manifest(tmp.file("m.csv"));
  const std::string cache = tmp.file("cache");

  const std::uint64_t stft_before = stft_call_count();
  FeatureBuildResult cold = build_features(m, mel, cache);
  const std::uint64_t stft_cold = stft_call_count() - stft_before;
  CHECK(cold.cache_hits == 0);
  CHECK(cold.cache_misses == 2);
  CHECK(stft_cold == 2);
  REQUIRE(cold.samples.size() == 2);
  CHECK(cold.samples[0].label == 0);
  CHECK(cold.samples[1].label == 1);
  CHECK(cold.samples[0].features.n_mels == 16);
  CHECK(cold.total_frames == cold.samples[0].features.frames +
                                 cold.samples[1].features.frames);
  CHECK_FALSE(cold.samples[0].waveform.samples.empty());

  const std::uint64_t warm_before = stft_call_count();
  FeatureBuildResult warm = build_features(m, mel, cache);
  CHECK(stft_call_count() - warm_before == 0);  // zero DSP on the warm run
  CHECK(warm.cache_hits == 2);
  CHECK(warm.cache_misses == 0);
  for (int i = 0; i < 2; ++i) {
    CHECK(warm.samples[i].features.values == cold.samples[i].features.values);
    CHECK(warm.samples[i].features.sample_rate ==
          cold.samples[i].features.sample_rate);
    CHECK(warm.samples[i].features.frame_rate ==
          cold.samples[i].features.frame_rate);
  }

  CHECK(std::ifstream(cache + "/index.json").good());

  // A changed hop invalidates every entry via the content hash.
  MelConfig mel2 = mel;
  mel2.hop = 128;
  FeatureBuildResult redo = build_features(m, mel2, cache);
  CHECK(redo.cache_hits == 0);
  CHECK(redo.cache_misses == 2);

  // keep_waveforms=false drops audio but returns identical features.
  FeatureBuildResult lean = build_features(m, mel, cache, false);
  CHECK(lean.samples[0].waveform.samples.empty());
  CHECK(lean.samples[0].features.values == cold.samples[0].features.values);
}

TEST_CASE("one corrupt file fails the build and is named exactly") {
  TempDir tmp;
  const MelConfig mel = small_mel();
  write_wav_pcm16(tmp.file("good1.wav"), sine(300, 0.1, 8000));
  write_wav_pcm16(tmp.file("good2.wav"), sine(500, 0.1, 8000));
  write_text(tmp.file("bad.wav"), "this is not audio");
  write_text(tmp.file("m.csv"),
             "path,label,speaker\n"
             "good1.wav,a,\nbad.wav,b,\ngood2.wav,a,\n");
  const Manifest m = load_manifest(tmp.file("m.csv"));
  try {
    build_features(m, mel, tmp.file("cache"));
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.wav") != std::string::npos);
    CHECK(msg.find("good1.wav") == std::string::npos);
    CHECK(msg.find("good2.wav") == std::string::npos);
  }
}

TEST_CASE("feature codec round-trips and rejects corruption") {
  LogMelSpectrogram f;
  f.n_mels = 4;
  f.frames = 3;
  Rng rng(5);
  f.values.resize(12);
  for (double& v : f.values) v = rng.uniform(-80.0, 0.0);

  const std::vector<std::uint8_t> enc = encode_features(f);
  const LogMelSpectrogram dec = decode_features(enc, "unit");
  CHECK(dec.n_mels == 4);
  CHECK(dec.frames == 3);
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    // f32 quantization is the only difference.
    CHECK(dec.values[i] == static_cast<double>(static_cast<float>(f.values[i])));
  }
  // The codec is idempotent, which is what makes hits == misses bitwise.
  CHECK(encode_features(dec) == enc);

  auto cut = enc;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(decode_features(cut, "unit"), FormatError);

  auto flip = enc;
  flip[10] ^= 0x20;
  CHECK_THROWS_AS(decode_features(flip, "unit"), FormatError);

  auto magic = enc;
  magic[0] = 'Z';
  CHECK_THROWS_AS(decode_features(magic, "unit"), FormatError);

  auto version = enc;
  version[4] = 9;
  CHECK_THROWS_AS(decode_features(version, "unit"), FormatError);

  CHECK_THROWS_AS(decode_features({1, 2, 3}, "unit"), FormatError);
}

TEST_CASE("cache keys cover audio bytes and every mel field") {
  const std::vector<std::uint8_t> audio = {1, 2, 3, 4, 5};
  const MelConfig mel = small_mel();
  const std::string base = feature_cache_key(audio, mel);
  CHECK(base.size() == 16);
  CHECK(feature_cache_key(audio, mel) == base);

  std::vector<std::uint8_t> other_audio = audio;
  other_audio[0] = 9;
  CHECK(feature_cache_key(other_audio, mel) != base);

  MelConfig m2 = mel;
  m2.hop = mel.hop * 2;
  CHECK(feature_cache_key(audio, m2) != base);
  MelConfig m3 = mel;
  m3.f_max = 3000.0;
  CHECK(feature_cache_key(audio, m3) != base);
}

TEST_CASE("synthetic corpus generation is deterministic and validated") {
  const std::vector<SynthClassSpec> specs = {
      {"class_b", 1200.0, 8.0}, {"class_a", 300.0, 2.0}};

  auto waves = generate_synthetic(3, specs, 8000, {0.2, 0.4}, 7);
  REQUIRE(waves.size() == 6);
  // Ids follow sorted names: class_a -> 0, class_b -> 1 even though the
  // specs were given in the other order.
  CHECK(synthetic_label_names(specs) ==
        std::vector<std::string>{"class_a", "class_b"});
  CHECK(waves[0].second == 0);
  CHECK(waves[3].second == 1);
  for (const auto& [w, label] : waves) {
    CHECK(w.sample_rate == 8000);
    CHECK(w.samples.size() >= static_cast<std::size_t>(0.2 * 8000) - 1);
    CHECK(w.samples.size() <= static_cast<std::size_t>(0.4 * 8000) + 1);
  }

  auto again = generate_synthetic(3, specs, 8000, {0.2, 0.4}, 7);
  for (std::size_t i = 0; i < waves.size(); ++i) {
    CHECK(waves[i].first.samples == again[i].first.samples);
  }
  auto different = generate_synthetic(3, specs, 8000, {0.2, 0.4}, 8);
  CHECK(waves[0].first.samples != different[0].first.samples);

  CHECK_THROWS_AS(generate_synthetic(0, specs, 8000, {0.2, 0.4}, 7),
                  ValueError);
  CHECK_THROWS_AS(
      generate_synthetic(3, {{"solo", 500.0, 2.0}}, 8000, {0.2, 0.4}, 7),
      ValueError);
  CHECK_THROWS_AS(generate_synthetic(
                      3, {{"a", 500.0, 2.0}, {"b", 500.0, 2.0}}, 8000,
                      {0.2, 0.4}, 7),
                  ValueError);
  CHECK_THROWS_AS(generate_synthetic(
                      3, {{"a", 500.0, 2.0}, {"a", 900.0, 3.0}}, 8000,
                      {0.2, 0.4}, 7),
                  ValueError);
  CHECK_THROWS_AS(generate_synthetic(3, specs, 8000, {0.4, 0.2}, 7),
                  ValueError);
  CHECK_THROWS_AS(generate_synthetic(
                      3, {{"a", 500.0, 2.0}, {"b", 7000.0, 3.0}}, 8000,
                      {0.2, 0.4}, 7),
                  ValueError);
}

TEST_CASE("synthetic classes are separable in mel space") {
  const std::vector<SynthClassSpec> specs = {{"a", 300.0, 2.0},
                                             {"b", 1200.0, 8.0}};
  const MelConfig mel = small_mel();
  auto waves = generate_synthetic(30, specs, 8000, {0.2, 0.4}, 11);
  auto samples = samples_from_waveforms(waves, mel, false);

  // Mel-band argmax (of the per-band mean) separates the classes for every
  // single sample: 300 Hz always lands in a lower band than 1200 Hz.
  std::set<int> bands_a, bands_b;
  for (const Sample& s : samples) {
    std::vector<double> mean(static_cast<std::size_t>(s.features.n_mels), 0.0);
    for (int m = 0; m < s.features.n_mels; ++m) {
      for (int t = 0; t < s.features.frames; ++t) {
        mean[static_cast<std::size_t>(m)] += s.features.at(m, t);
      }
    }
    const int arg = static_cast<int>(
        std::max_element(mean.begin(), mean.end()) - mean.begin());
    (s.label == 0 ? bands_a : bands_b).insert(arg);
  }
  for (int a : bands_a) {
    for (int b : bands_b) {
      CHECK(a != b);
      CHECK(a < b);
    }
  }
}

TEST_CASE("nearest-centroid on mean mel vectors separates three classes") {
  const std::vector<SynthClassSpec> specs = {
      {"class_a", 300.0, 2.0}, {"class_b", 1200.0, 8.0},
      {"class_c", 2800.0, 4.0}};
  const MelConfig mel = small_mel();
  auto waves = generate_synthetic(20, specs, 8000, {0.2, 0.4}, 13);
  auto samples = samples_from_waveforms(waves, mel, false);

  auto mean_vec = [](const Sample& s) {
    std::vector<double> mean(static_cast<std::size_t>(s.features.n_mels), 0.0);
    for (int m = 0; m < s.features.n_mels; ++m) {
      for (int t = 0; t < s.features.frames; ++t) {
        mean[static_cast<std::size_t>(m)] += s.features.at(m, t);
      }
      mean[static_cast<std::size_t>(m)] /= s.features.frames;
    }
    return mean;
  };

  std::vector<std::vector<double>> centroids(
      3, std::vector<double>(static_cast<std::size_t>(mel.n_mels), 0.0));
  std::vector<int> counts(3, 0);
  for (const Sample& s : samples) {
    const auto v = mean_vec(s);
    for (std::size_t i = 0; i < v.size(); ++i) {
      centroids[static_cast<std::size_t>(s.label)][i] += v[i];
    }
    ++counts[static_cast<std::size_t>(s.label)];
  }
  for (int c = 0; c < 3; ++c) {
    for (double& x : centroids[static_cast<std::size_t>(c)]) {
      x /= counts[static_cast<std::size_t>(c)];
    }
  }

  int correct = 0;
  for (const Sample& s : samples) {
    const auto v = mean_vec(s);
    int best = -1;
    double best_d = 0.0;
    for (int c = 0; c < 3; ++c) {
      double d = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double diff = v[i] - centroids[static_cast<std::size_t>(c)][i];
        d += diff * diff;
      }
      if (best < 0 || d < best_d) {
        best = c;
        best_d = d;
      }
    }
    correct += (best == s.label) ? 1 : 0;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(samples.size()) >=
        0.99);
}

TEST_CASE("parallel feature building matches the single-threaded result") {
  TempDir tmp;
  const MelConfig mel = small_mel();
  std::string manifest_text = "path,label,speaker\n";
  for (int i = 0; i < 6; ++i) {
    const std::string name = "w" + std::to_string(i) + ".wav";
    write_wav_pcm16(tmp.file(name), sine(200.0 + 150.0 * i, 0.12, 8000));
    manifest_text += name + "," + (i % 2 == 0 ? "even" : "odd") + ",\n";
  }
  write_text(tmp.file("m.csv"), manifest_text);
  const Manifest m = load_manifest(tmp.file("m.csv"));

  FeatureBuildResult seq = build_features(m, mel, tmp.file("cache1"), true, 1);
  FeatureBuildResult par = build_features(m, mel, tmp.file("cache2"), true, 3);
  REQUIRE(seq.samples.size() == par.samples.size());
  for (std::size_t i = 0; i < seq.samples.size(); ++i) {
    CHECK(seq.samples[i].features.values == par.samples[i].features.values);
    CHECK(seq.samples[i].label == par.samples[i].label);
  }
}
