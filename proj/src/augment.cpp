#include "aen/augment.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "aen/error.h"

namespace aen {

void AugmentConfig::validate() const {
  if (!(snr_db_min <= snr_db_max)) {
    throw ConfigError("augment: snr range [" + std::to_string(snr_db_min) +
                      ", " + std::to_string(snr_db_max) + "] is inverted");
  }
  if (!std::isfinite(snr_db_min) || !std::isfinite(snr_db_max)) {
    throw ConfigError("augment: snr bounds must be finite");
  }
  if (n_freq_masks < 0 || n_time_masks < 0) {
    throw ConfigError("augment: mask counts must be >= 0");
  }
  if (max_freq_width < 0 || max_time_width < 0) {
    throw ConfigError("augment: mask widths must be >= 0");
  }
  if (!(apply_probability >= 0.0 && apply_probability <= 1.0)) {
    throw ConfigError("augment: apply_probability " +
                      std::to_string(apply_probability) + " outside [0, 1]");
  }
}

Waveform awgn(const Waveform& w, double snr_db, Rng& rng, bool* zero_signal) {
  if (!std::isfinite(snr_db)) {
    throw ValueError("awgn: snr_db must be finite");
  }
  if (zero_signal != nullptr) *zero_signal = false;

  double power = 0.0;
  for (double s : w.samples) power += s * s;
  power /= static_cast<double>(w.samples.empty() ? 1 : w.samples.size());
  if (power == 0.0) {
    // SNR is undefined for silence; hand the signal back untouched.
    if (zero_signal != nullptr) *zero_signal = true;
    return w;
  }

  const double noise_var = power / std::pow(10.0, snr_db / 10.0);
  const double sigma = std::sqrt(noise_var);
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i) {
    out.samples[i] = w.samples[i] + sigma * rng.normal();
  }
  return out;
}

LogMelSpectrogram spec_augment(const LogMelSpectrogram& s,
                               const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (s.frames < 1 || s.n_mels < 1) {
    throw ValueError("spec_augment: empty spectrogram");
  }

  LogMelSpectrogram out = s;
  const double fill =
      *std::min_element(s.values.begin(), s.values.end());

  for (int i = 0; i < cfg.n_freq_masks; ++i) {
    int width = static_cast<int>(rng.uniform_int(0, cfg.max_freq_width));
    width = std::min(width, s.n_mels);
    const int start =
        static_cast<int>(rng.uniform_int(0, s.n_mels - width));
    for (int m = start; m < start + width; ++m) {
      for (int t = 0; t < s.frames; ++t) out.at(m, t) = fill;
    }
  }
  for (int i = 0; i < cfg.n_time_masks; ++i) {
    const int cap = std::min(cfg.max_time_width, s.frames);
    const int width = static_cast<int>(rng.uniform_int(0, cap));
    const int start =
        static_cast<int>(rng.uniform_int(0, s.frames - width));
    for (int m = 0; m < s.n_mels; ++m) {
      for (int t = start; t < start + width; ++t) out.at(m, t) = fill;
    }
  }
  return out;
}

}  // namespace aen
