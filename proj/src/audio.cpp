#include "aen/audio.h"

#include <atomic>
#include <cmath>
#include <string>

#include "aen/error.h"
#include "detail/gemm.h"

namespace aen {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::atomic<std::uint64_t> g_stft_calls{0};

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Mirror an out-of-range index into [0, n) without duplicating the edge
// sample (reflect padding).
std::int64_t mirror(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

// Iterative radix-2 FFT, in place. Twiddles come from a per-call table
// (exact cos/sin per index) so no rotation error accumulates.
void fft_inplace(std::vector<double>& re, std::vector<double>& im,
                 const std::vector<double>& tw_re,
                 const std::vector<double>& tw_im) {
  const size_t n = re.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const size_t half = len >> 1;
    const size_t stride = n / len;
    for (size_t base = 0; base < n; base += len) {
      for (size_t k = 0; k < half; ++k) {
        const double wr = tw_re[k * stride];
        const double wi = tw_im[k * stride];
        const size_t a = base + k;
        const size_t b = a + half;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

}  // namespace

double mel_from_hz(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;  // 15.0
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double hz_from_mel(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

void MelConfig::validate(int sample_rate) const {
  if (sample_rate <= 0) {
    throw ConfigError("mel: sample rate must be positive, got " +
                      std::to_string(sample_rate));
  }
  if (!power_of_two(n_fft)) {
    throw ConfigError("mel: n_fft must be a power of two, got " +
                      std::to_string(n_fft));
  }
  if (hop < 1 || hop > n_fft) {
    throw ConfigError("mel: hop " + std::to_string(hop) +
                      " must be in [1, n_fft=" + std::to_string(n_fft) + "]");
  }
  if (n_mels < 1) {
    throw ConfigError("mel: n_mels must be at least 1");
  }
  if (!(f_min >= 0.0) || !(f_min < f_max)) {
    throw ConfigError("mel: need 0 <= f_min < f_max, got [" +
                      std::to_string(f_min) + ", " + std::to_string(f_max) +
                      "]");
  }
  const double nyquist = sample_rate / 2.0;
  if (f_max > nyquist) {
    throw ConfigError("mel: f_max " + std::to_string(f_max) +
                      " above Nyquist " + std::to_string(nyquist) +
                      " for sample rate " + std::to_string(sample_rate));
  }
}

Mat stft_power(const Waveform& w, const MelConfig& cfg) {
  cfg.validate(w.sample_rate);
  if (w.samples.empty()) {
    throw ValueError("stft: empty waveform");
  }
  g_stft_calls.fetch_add(1, std::memory_order_relaxed);

  const int n = cfg.n_fft;
  const std::int64_t len = static_cast<std::int64_t>(w.samples.size());
  const int T = static_cast<int>(len / cfg.hop) + 1;
  const int bins = n / 2 + 1;

  // Periodic Hann.
  std::vector<double> win(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    win[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / n));
  }
  // Twiddle table for the FFT.
  std::vector<double> tw_re(static_cast<size_t>(n / 2));
  std::vector<double> tw_im(static_cast<size_t>(n / 2));
  for (int k = 0; k < n / 2; ++k) {
    const double ang = -2.0 * kPi * k / n;
    tw_re[static_cast<size_t>(k)] = std::cos(ang);
    tw_im[static_cast<size_t>(k)] = std::sin(ang);
  }

  Mat out(T, bins);
  std::vector<double> re(static_cast<size_t>(n)), im(static_cast<size_t>(n));
  const int pad = n / 2;
  for (int t = 0; t < T; ++t) {
    const std::int64_t start = static_cast<std::int64_t>(t) * cfg.hop - pad;
    for (int i = 0; i < n; ++i) {
      const std::int64_t src = mirror(start + i, len);
      re[static_cast<size_t>(i)] =
          w.samples[static_cast<size_t>(src)] * win[static_cast<size_t>(i)];
      im[static_cast<size_t>(i)] = 0.0;
    }
    fft_inplace(re, im, tw_re, tw_im);
    for (int b = 0; b < bins; ++b) {
      out.at(t, b) = re[static_cast<size_t>(b)] * re[static_cast<size_t>(b)] +
                     im[static_cast<size_t>(b)] * im[static_cast<size_t>(b)];
    }
  }
  return out;
}

Mat mel_filterbank(const MelConfig& cfg, int sample_rate) {
  cfg.validate(sample_rate);
  const int bins = cfg.n_fft / 2 + 1;
  Mat fb(cfg.n_mels, bins);

  // n_mels + 2 corner frequencies equally spaced on the mel scale.
  const double mel_lo = mel_from_hz(cfg.f_min);
  const double mel_hi = mel_from_hz(cfg.f_max);
  std::vector<double> corners(static_cast<size_t>(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    const double mel =
        mel_lo + (mel_hi - mel_lo) * i / static_cast<double>(cfg.n_mels + 1);
    corners[static_cast<size_t>(i)] = hz_from_mel(mel);
  }

  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lower = corners[static_cast<size_t>(m)];
    const double center = corners[static_cast<size_t>(m) + 1];
    const double upper = corners[static_cast<size_t>(m) + 2];
    const double enorm = 2.0 / (upper - lower);  // area normalisation
    for (int b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / cfg.n_fft;
      const double rise = (f - lower) / (center - lower);
      const double fall = (upper - f) / (upper - center);
      const double weight = std::max(0.0, std::min(rise, fall));
      fb.at(m, b) = weight * enorm;
    }
  }
  return fb;
}

Mat power_to_db(const Mat& power) {
  constexpr double amin = 1e-10;
  constexpr double top_db = 80.0;

  double ref = 0.0;
  for (double x : power.v) {
    if (x < 0.0) throw ValueError("power_to_db: negative power entry");
    ref = std::max(ref, x);
  }
  // Subtract the logs before scaling: the max entry then cancels exactly
  // to 0 dB (identical log10 calls), immune to FMA contraction.
  const double log_ref = std::log10(std::max(ref, amin));

  Mat out(power.rows, power.cols);
  double out_max = -1e300;
  for (size_t i = 0; i < power.v.size(); ++i) {
    out.v[i] = 10.0 * (std::log10(std::max(power.v[i], amin)) - log_ref);
    out_max = std::max(out_max, out.v[i]);
  }
  const double floor_db = out_max - top_db;
  for (double& x : out.v) x = std::max(x, floor_db);
  return out;
}

LogMelSpectrogram melspectrogram(const Waveform& w, const MelConfig& cfg) {
  const Mat power = stft_power(w, cfg);                 // [T x bins]
  const Mat fb = mel_filterbank(cfg, w.sample_rate);    // [n_mels x bins]
  const int T = power.rows;
  const int bins = power.cols;

  Mat mel(cfg.n_mels, T);
  // mel[m, t] = sum_b fb[m, b] * power[t, b]
  detail::gemm_nt(cfg.n_mels, T, bins, fb.v.data(), power.v.data(),
                  mel.v.data());
  const Mat db = power_to_db(mel);

  LogMelSpectrogram s;
  s.n_mels = cfg.n_mels;
  s.frames = T;
  s.values = db.v;
  s.frame_rate = static_cast<double>(w.sample_rate) / cfg.hop;
  s.sample_rate = w.sample_rate;
  return s;
}

std::uint64_t stft_call_count() {
  return g_stft_calls.load(std::memory_order_relaxed);
}

}  // namespace aen
