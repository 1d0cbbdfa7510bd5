#include <cmath>
#include <complex>
#include <numbers>

#include "mpc/features.hpp"

namespace mpc {

namespace {

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

struct FrameGeometry {
  std::size_t window;
  std::size_t hop;
  std::size_t fft_size;
};

FrameGeometry geometry(const FeatureConfig& cfg, int sample_rate) {
  FrameGeometry g{};
  g.window = static_cast<std::size_t>(std::lround(sample_rate * cfg.frame_length_ms / 1000.0));
  g.hop = static_cast<std::size_t>(std::lround(sample_rate * cfg.frame_shift_ms / 1000.0));
  g.fft_size = cfg.fft_size ? cfg.fft_size : next_pow2(g.window);
  if (g.window == 0 || g.hop == 0) throw Error("fbank: window and hop must be at least one sample");
  if (g.fft_size < g.window || (g.fft_size & (g.fft_size - 1)) != 0) {
    throw Error("fbank: fft_size must be a power of two >= window length");
  }
  return g;
}

double high_hz(const FeatureConfig& cfg, int sample_rate) {
  return cfg.mel_high_hz > 0.0 ? cfg.mel_high_hz : sample_rate / 2.0;
}

}  // namespace

void FeatureConfig::validate(int sample_rate) const {
  if (d_mel == 0) throw Error("feature config: d_mel must be positive");
  if (!(log_floor > 0.0)) throw Error("feature config: log_floor must be positive");
  const double hi = mel_high_hz > 0.0 ? mel_high_hz : sample_rate / 2.0;
  if (!(mel_low_hz >= 0.0 && mel_low_hz < hi && hi <= sample_rate / 2.0)) {
    throw Error("feature config: need 0 <= mel_low_hz < mel_high_hz <= sample_rate/2");
  }
}

std::size_t frame_count(std::size_t num_samples, std::size_t window, std::size_t hop) {
  if (hop == 0) throw Error("frame_count: hop must be positive");
  if (num_samples < window) return 0;
  return 1 + (num_samples - window) / hop;
}

std::vector<double> mel_center_frequencies(const FeatureConfig& cfg, int sample_rate) {
  const double lo = hz_to_mel(cfg.mel_low_hz);
  const double hi = hz_to_mel(high_hz(cfg, sample_rate));
  const double step = (hi - lo) / static_cast<double>(cfg.d_mel + 1);
  std::vector<double> centres(cfg.d_mel);
  for (std::size_t m = 0; m < cfg.d_mel; ++m) centres[m] = mel_to_hz(lo + step * static_cast<double>(m + 1));
  return centres;
}

FeatureSequence fbank(const Waveform& wave, const FeatureConfig& cfg) {
  cfg.validate(wave.sample_rate);
  const FrameGeometry geo = geometry(cfg, wave.sample_rate);
  const std::size_t num_frames = frame_count(wave.samples.size(), geo.window, geo.hop);
  const std::size_t bins = geo.fft_size / 2 + 1;

  // Triangular filters in the mel domain: weights[m][k] for FFT bin k.
  const double mel_lo = hz_to_mel(cfg.mel_low_hz);
  const double mel_hi = hz_to_mel(high_hz(cfg, wave.sample_rate));
  const double mel_step = (mel_hi - mel_lo) / static_cast<double>(cfg.d_mel + 1);
  std::vector<std::vector<double>> weights(cfg.d_mel, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < cfg.d_mel; ++m) {
    const double left = mel_lo + mel_step * static_cast<double>(m);
    const double centre = left + mel_step;
    const double right = centre + mel_step;
    for (std::size_t k = 0; k < bins; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * wave.sample_rate / static_cast<double>(geo.fft_size));
      if (mel > left && mel < right) {
        weights[m][k] = mel <= centre ? (mel - left) / (centre - left) : (right - mel) / (right - centre);
      }
    }
  }

  std::vector<double> window(geo.window);
  for (std::size_t i = 0; i < geo.window; ++i) {
    window[i] = geo.window == 1 ? 1.0
                                : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                         static_cast<double>(geo.window - 1));
  }

  FeatureSequence out;
  out.frame_length_ms = cfg.frame_length_ms;
  out.frame_shift_ms = cfg.frame_shift_ms;
  out.utterance_id = wave.utterance_id;
  out.speaker_id = wave.speaker_id;
  out.frames = Tensor(Shape{num_frames, cfg.d_mel});

  std::vector<double> frame(geo.window);
  std::vector<std::complex<double>> spectrum(geo.fft_size);
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < num_frames; ++t) {
    const double* src = wave.samples.data() + t * geo.hop;
    std::copy_n(src, geo.window, frame.begin());
    for (std::size_t i = geo.window - 1; i > 0; --i) frame[i] -= cfg.preemphasis * frame[i - 1];
    frame[0] -= cfg.preemphasis * frame[0];
    std::fill(spectrum.begin(), spectrum.end(), std::complex<double>{});
    for (std::size_t i = 0; i < geo.window; ++i) spectrum[i] = frame[i] * window[i];
    fft(spectrum);
    for (std::size_t k = 0; k < bins; ++k) power[k] = std::norm(spectrum[k]);
    for (std::size_t m = 0; m < cfg.d_mel; ++m) {
      double energy = 0.0;
      for (std::size_t k = 0; k < bins; ++k) energy += weights[m][k] * power[k];
      out.frames.at(t, m) = std::log(std::max(energy, cfg.log_floor));
    }
  }
  return out;
}

}  // namespace mpc
