#include "aen/dataset.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "aen/error.h"
#include "aen/wav.h"
#include "detail/bytes.h"
#include "detail/crc32.h"

namespace fs = std::filesystem;

namespace aen {

namespace {

constexpr char kCacheMagic[4] = {'A', 'E', 'F', '1'};
constexpr std::uint16_t kCacheVersion = 1;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

int Manifest::label_id(const std::string& name) const {
  auto it = std::lower_bound(labels.begin(), labels.end(), name);
  if (it == labels.end() || *it != name) {
    throw DataError("label '" + name + "' is not in the manifest vocabulary");
  }
  return static_cast<int>(it - labels.begin());
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open manifest: " + path);
  }
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw FormatError("manifest is empty: " + path);
  }
  const std::vector<std::string> header = split_csv_line(header_line);
  int col_path = -1, col_label = -1, col_speaker = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = trim(header[i]);
    if (name == "path") {
      col_path = static_cast<int>(i);
    } else if (name == "label") {
      col_label = static_cast<int>(i);
    } else if (name == "speaker") {
      col_speaker = static_cast<int>(i);
    } else {
      throw FormatError("manifest has unknown column '" + name + "': " + path);
    }
  }
  if (col_path < 0 || col_label < 0 || col_speaker < 0) {
    throw FormatError(
        "manifest header must name the columns path, label, speaker: " + path);
  }

  const fs::path base = fs::path(path).parent_path();
  Manifest m;
  std::set<std::string> seen_paths;
  std::set<std::string> labels;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw FormatError("manifest line " + std::to_string(line_no) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(header.size()) + ": " + path);
    }
    ManifestEntry e;
    e.path = trim(fields[static_cast<std::size_t>(col_path)]);
    e.label = trim(fields[static_cast<std::size_t>(col_label)]);
    e.speaker = trim(fields[static_cast<std::size_t>(col_speaker)]);
    if (e.path.empty() || e.label.empty()) {
      throw FormatError("manifest line " + std::to_string(line_no) +
                        " has an empty path or label: " + path);
    }
    if (fs::path(e.path).is_relative()) {
      e.path = (base / e.path).string();
    }
    if (!seen_paths.insert(e.path).second) {
      throw DataError("manifest lists path twice: " + e.path);
    }
    labels.insert(e.label);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) {
    throw DataError("manifest has no data rows: " + path);
  }
  m.labels.assign(labels.begin(), labels.end());  // std::set is sorted
  return m;
}

std::string feature_cache_key(const std::vector<std::uint8_t>& audio_bytes,
                              const MelConfig& mel) {
  // FNV-1a over the audio bytes followed by a canonical encoding of every
  // mel setting, so any config change moves entries to new keys.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const std::uint8_t* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  mix(audio_bytes.data(), audio_bytes.size());
  std::vector<std::uint8_t> cfg;
  detail::put_u32(cfg, static_cast<std::uint32_t>(mel.n_fft));
  detail::put_u32(cfg, static_cast<std::uint32_t>(mel.hop));
  detail::put_u32(cfg, static_cast<std::uint32_t>(mel.n_mels));
  detail::put_f64(cfg, mel.f_min);
  detail::put_f64(cfg, mel.f_max);
  mix(cfg.data(), cfg.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::vector<std::uint8_t> encode_features(const LogMelSpectrogram& f) {
  std::vector<std::uint8_t> body;
  detail::put_u32(body, static_cast<std::uint32_t>(f.n_mels));
  detail::put_u32(body, static_cast<std::uint32_t>(f.frames));
  for (double v : f.values) {
    detail::put_f32(body, static_cast<float>(v));
  }
  std::vector<std::uint8_t> out;
  out.reserve(body.size() + 10);
  out.insert(out.end(), kCacheMagic, kCacheMagic + 4);
  detail::put_u16(out, kCacheVersion);
  out.insert(out.end(), body.begin(), body.end());
  detail::put_u32(out, detail::crc32(body.data(), body.size()));
  return out;
}

LogMelSpectrogram decode_features(const std::vector<std::uint8_t>& bytes,
                                  const std::string& name_for_errors) {
  if (bytes.size() < 10) {
    throw FormatError("feature cache entry too short: " + name_for_errors);
  }
  if (std::memcmp(bytes.data(), kCacheMagic, 4) != 0) {
    throw FormatError("not a feature cache entry (bad magic): " +
                      name_for_errors);
  }
  const std::uint16_t version =
      static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kCacheVersion) {
    throw FormatError("unsupported feature cache version " +
                      std::to_string(version) + ": " + name_for_errors);
  }
  const std::uint8_t* body = bytes.data() + 6;
  const std::size_t body_len = bytes.size() - 10;
  const std::uint8_t* crc_bytes = bytes.data() + bytes.size() - 4;
  const std::uint32_t stored =
      static_cast<std::uint32_t>(crc_bytes[0]) |
      (static_cast<std::uint32_t>(crc_bytes[1]) << 8) |
      (static_cast<std::uint32_t>(crc_bytes[2]) << 16) |
      (static_cast<std::uint32_t>(crc_bytes[3]) << 24);
  if (detail::crc32(body, body_len) != stored) {
    throw FormatError("feature cache checksum mismatch: " + name_for_errors);
  }
  detail::ByteReader r(body, body_len, name_for_errors);
  LogMelSpectrogram f;
  f.n_mels = static_cast<int>(r.u32());
  f.frames = static_cast<int>(r.u32());
  if (f.n_mels < 1 || f.frames < 1) {
    throw FormatError("feature cache entry has bad dimensions: " +
                      name_for_errors);
  }
  const std::size_t n =
      static_cast<std::size_t>(f.n_mels) * static_cast<std::size_t>(f.frames);
  if (r.remaining() != 4 * n) {
    throw FormatError("feature cache payload size mismatch: " +
                      name_for_errors);
  }
  f.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    f.values[i] = static_cast<double>(r.f32());
  }
  // frame_rate / sample_rate are not part of the cache format; the caller
  // restores them from the audio header so hits and misses stay identical.
  return f;
}

FeatureBuildResult build_features(const Manifest& manifest,
                                  const MelConfig& mel,
                                  const std::string& cache_dir,
                                  bool keep_waveforms, int jobs) {
  if (jobs < 1) {
    throw ValueError("build_features: jobs must be >= 1");
  }
  fs::create_directories(cache_dir);

  const std::size_t n = manifest.entries.size();
  FeatureBuildResult result;
  result.samples.resize(n);
  std::vector<int> hit_flags(n, 0);
  std::vector<std::pair<std::string, std::string>> failures;
  std::mutex failures_mutex;

  auto process = [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    try {
      const std::vector<std::uint8_t> audio_bytes =
          detail::read_file_bytes(e.path);
      const std::string key = feature_cache_key(audio_bytes, mel);
      const fs::path cache_file = fs::path(cache_dir) / (key + ".aef");

      Waveform wav = load_wav(e.path);
      LogMelSpectrogram feats;
      bool hit = false;
      if (fs::exists(cache_file)) {
        try {
          feats = decode_features(detail::read_file_bytes(cache_file.string()),
                                  cache_file.string());
          hit = true;
        } catch (const FormatError&) {
          hit = false;  // corrupt entry: fall through and recompute
        }
      }
      if (!hit) {
        const LogMelSpectrogram fresh = melspectrogram(wav, mel);
        const std::vector<std::uint8_t> encoded = encode_features(fresh);
        detail::write_file_bytes(cache_file.string(), encoded);
        // Serve the decoded copy so a cache hit later returns the same bits.
        feats = decode_features(encoded, cache_file.string());
      }
      feats.sample_rate = wav.sample_rate;
      feats.frame_rate = static_cast<double>(wav.sample_rate) / mel.hop;

      Sample& s = result.samples[i];
      s.features = std::move(feats);
      s.label = manifest.label_id(e.label);
      s.path = e.path;
      s.speaker = e.speaker;
      if (keep_waveforms) {
        s.waveform = std::move(wav);
      }
      hit_flags[i] = hit ? 1 : 0;
    } catch (const Error& err) {
      std::lock_guard<std::mutex> lock(failures_mutex);
      failures.emplace_back(e.path, err.what());
    }
  };

  if (jobs == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) {
      process(i);
    }
  } else {
    const int workers = std::min<int>(jobs, static_cast<int>(n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w); i < n;
             i += static_cast<std::size_t>(workers)) {
          process(i);
        }
      });
    }
    for (auto& t : pool) {
      t.join();
    }
  }

  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    std::ostringstream msg;
    msg << "feature build failed for " << failures.size() << " file(s):";
    for (const auto& [p, why] : failures) {
      msg << "\n  " << p << ": " << why;
    }
    throw DataError(msg.str());
  }

  for (std::size_t i = 0; i < n; ++i) {
    result.cache_hits += hit_flags[i];
    result.total_frames += result.samples[i].features.frames;
  }
  result.cache_misses = static_cast<int>(n) - result.cache_hits;

  // Single-writer index, emitted once after the parallel scan.
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = result.samples[i];
    nlohmann::ordered_json row;
    row["path"] = s.path;
    row["n_mels"] = s.features.n_mels;
    row["frames"] = s.features.frames;
    row["label"] = manifest.labels[static_cast<std::size_t>(s.label)];
    index.push_back(row);
  }
  std::ofstream out(fs::path(cache_dir) / "index.json");
  if (!out) {
    throw IoError("cannot write cache index in " + cache_dir);
  }
  out << index.dump(2) << "\n";

  return result;
}

std::vector<std::string> synthetic_label_names(
    const std::vector<SynthClassSpec>& class_specs) {
  std::vector<std::string> names;
  names.reserve(class_specs.size());
  for (const auto& s : class_specs) {
    names.push_back(s.name);
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<std::pair<Waveform, int>> generate_synthetic(
    int n_per_class, const std::vector<SynthClassSpec>& class_specs,
    int sample_rate, std::pair<double, double> duration_range,
    std::uint64_t seed) {
  if (n_per_class < 1) {
    throw ValueError("generate_synthetic: n_per_class must be >= 1");
  }
  if (class_specs.size() < 2) {
    throw ValueError("generate_synthetic: need at least 2 classes");
  }
  if (sample_rate < 1) {
    throw ValueError("generate_synthetic: sample_rate must be >= 1");
  }
  const auto [lo, hi] = duration_range;
  if (!(lo > 0.0) || !(hi >= lo)) {
    throw ValueError("generate_synthetic: duration range must satisfy 0 < lo <= hi");
  }
  std::set<std::string> names;
  std::set<std::pair<double, double>> tones;
  for (const auto& s : class_specs) {
    if (s.name.empty()) {
      throw ValueError("generate_synthetic: class name must not be empty");
    }
    if (!names.insert(s.name).second) {
      throw ValueError("generate_synthetic: duplicate class name '" + s.name +
                       "'");
    }
    if (!tones.insert({s.carrier_hz, s.am_hz}).second) {
      throw ValueError("generate_synthetic: duplicate class spec (" +
                       std::to_string(s.carrier_hz) + " Hz, " +
                       std::to_string(s.am_hz) + " Hz)");
    }
    if (!(s.carrier_hz > 0.0) || s.carrier_hz >= sample_rate / 2.0) {
      throw ValueError("generate_synthetic: carrier must lie in (0, Nyquist)");
    }
    if (s.am_hz < 0.0) {
      throw ValueError("generate_synthetic: AM rate must be >= 0");
    }
  }

  // Ids follow lexicographic class-name order, like manifest labels.
  std::vector<SynthClassSpec> ordered = class_specs;
  std::sort(ordered.begin(), ordered.end(),
            [](const SynthClassSpec& a, const SynthClassSpec& b) {
              return a.name < b.name;
            });

  constexpr double two_pi = 6.283185307179586476925286766559;
  std::vector<std::pair<Waveform, int>> out;
  out.reserve(ordered.size() * static_cast<std::size_t>(n_per_class));
  for (std::size_t c = 0; c < ordered.size(); ++c) {
    const SynthClassSpec& spec = ordered[c];
    for (int i = 0; i < n_per_class; ++i) {
      Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(c),
                          static_cast<std::uint64_t>(i)));
      const double duration = rng.uniform(lo, hi);
      const auto len = static_cast<std::size_t>(std::max<long long>(
          1, std::llround(duration * sample_rate)));
      Waveform w;
      w.sample_rate = sample_rate;
      w.samples.resize(len);
      for (std::size_t t = 0; t < len; ++t) {
        const double tt = static_cast<double>(t) / sample_rate;
        const double am = 1.0 + 0.5 * std::sin(two_pi * spec.am_hz * tt);
        w.samples[t] = 0.5 * std::sin(two_pi * spec.carrier_hz * tt) * am +
                       rng.normal(0.0, 0.01);
      }
      out.emplace_back(std::move(w), static_cast<int>(c));
    }
  }
  return out;
}

std::vector<Sample> samples_from_waveforms(
    const std::vector<std::pair<Waveform, int>>& waves, const MelConfig& mel,
    bool keep_waveforms) {
  std::vector<Sample> out;
  out.reserve(waves.size());
  for (const auto& [w, label] : waves) {
    Sample s;
    s.features = melspectrogram(w, mel);
    s.label = label;
    if (keep_waveforms) {
      s.waveform = w;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace aen
