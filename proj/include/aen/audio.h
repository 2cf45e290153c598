#pragma once

#include <cstdint>
#include <vector>

namespace aen {

// Mono audio at a known sample rate. Samples are nominally in [-1, 1] when
// loaded from a file; synthetic or noise-augmented signals may exceed that
// range and are carried through unclipped.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 0;
};

// Spectrogram analysis settings. Defaults give the 2048/256/128-band
// log-Mel front end over 80-7600 Hz with a Hann window.
struct MelConfig {
  int n_fft = 2048;
  int hop = 256;
  int n_mels = 128;
  double f_min = 80.0;
  double f_max = 7600.0;

  // Throws ConfigError when a field is out of range or inconsistent with
  // the sample rate (f_max above Nyquist, n_fft not a power of two, ...).
  void validate(int sample_rate) const;
};

// Dense row-major matrix used by the DSP stages.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return v[static_cast<size_t>(r) * cols + c];
  }
};

// Log-Mel features in dB, referenced so the maximum is 0 dB. Row-major
// [n_mels x frames].
struct LogMelSpectrogram {
  int n_mels = 0;
  int frames = 0;
  std::vector<double> values;
  double frame_rate = 0.0;  // frames per second = sample_rate / hop
  int sample_rate = 0;

  double at(int m, int t) const {
    return values[static_cast<size_t>(m) * frames + t];
  }
  double& at(int m, int t) {
    return values[static_cast<size_t>(m) * frames + t];
  }
};

// Slaney mel scale: linear below 1 kHz (mel = hz / (200/3)), logarithmic
// above (step ln(6.4)/27 per mel).
double mel_from_hz(double hz);
double hz_from_mel(double mel);

// Power spectrogram: centered frames via reflect padding of n_fft/2 on both
// ends, periodic Hann window, |FFT|^2 per bin. Output [T x (n_fft/2 + 1)]
// with T = floor(len / hop) + 1.
Mat stft_power(const Waveform& w, const MelConfig& cfg);

// Triangular mel filterbank [n_mels x (n_fft/2 + 1)]: peaks equally spaced
// on the Slaney mel scale between f_min and f_max, each filter scaled by
// 2 / (f_upper - f_lower) so filters integrate to roughly equal area.
Mat mel_filterbank(const MelConfig& cfg, int sample_rate);

// 10*log10(x / ref) with ref = global max, floors at 1e-10, clamped to the
// top 80 dB of dynamic range. An all-zero input maps to all 0 dB.
Mat power_to_db(const Mat& power);

// Full front end: stft_power -> mel filterbank -> power_to_db.
LogMelSpectrogram melspectrogram(const Waveform& w, const MelConfig& cfg);

// Process-wide count of stft_power invocations. Instrumentation for the
// feature-cache tests, which assert that warm runs do no DSP work.
std::uint64_t stft_call_count();

}  // namespace aen
