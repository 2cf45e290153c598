#pragma once

#include "aen/audio.h"
#include "aen/rng.h"

namespace aen {

// Training-time augmentation settings. `enabled` is the master switch the
// training loop consults (the on/off ablation flips just this key);
// apply_probability gates each sample independently per epoch.
struct AugmentConfig {
  bool enabled = true;
  bool awgn_enabled = true;
  double snr_db_min = 15.0;
  double snr_db_max = 30.0;
  int n_freq_masks = 2;
  int max_freq_width = 16;   // mel bins
  int n_time_masks = 2;
  int max_time_width = 20;   // frames
  double apply_probability = 0.5;

  void validate() const;  // throws ConfigError
};

// Additive white Gaussian noise at the given signal-to-noise ratio: noise
// variance = P_signal / 10^(snr_db/10). An all-zero signal has no defined
// SNR; it is returned unchanged and *zero_signal (when non-null) is set.
Waveform awgn(const Waveform& w, double snr_db, Rng& rng,
              bool* zero_signal = nullptr);

// SpecAugment-style masking: n_freq_masks horizontal bands of width
// uniform in [0, max_freq_width] and n_time_masks vertical bands of width
// uniform in [0, min(max_time_width, T)], filled with the spectrogram's
// own minimum dB value (its silence floor). Cells outside the masks are
// bit-identical to the input. Draw order per mask: width, then start.
LogMelSpectrogram spec_augment(const LogMelSpectrogram& s,
                               const AugmentConfig& cfg, Rng& rng);

}  // namespace aen
