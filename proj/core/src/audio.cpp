#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "mpc/features.hpp"

namespace mpc {

namespace {

std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 64; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

// Kaiser-windowed sinc low-pass, normalized to unit DC gain.
std::vector<double> lowpass_taps(double cutoff, int half_width, double beta) {
  std::vector<double> taps(static_cast<std::size_t>(2 * half_width + 1));
  const double norm = bessel_i0(beta);
  double total = 0.0;
  for (int n = -half_width; n <= half_width; ++n) {
    const double x = 2.0 * cutoff * n;
    const double sinc = n == 0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    const double r = static_cast<double>(n) / half_width;
    const double window = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
    const double h = 2.0 * cutoff * sinc * window;
    taps[static_cast<std::size_t>(n + half_width)] = h;
    total += h;
  }
  for (double& h : taps) h /= total;
  return taps;
}

}  // namespace

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_wav: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) { return Error("load_wav: " + path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  int sample_rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32le(chunk + 4);
    if (pos + 8 + size > bytes.size()) throw fail("truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw fail("fmt chunk too short");
      const std::uint16_t format = read_u16le(chunk + 8);
      const std::uint16_t channels = read_u16le(chunk + 10);
      const std::uint16_t bits = read_u16le(chunk + 22);
      if (format != 1) throw fail("unsupported format tag " + std::to_string(format) + " (need PCM)");
      if (channels != 1) throw fail(std::to_string(channels) + " channels (need mono)");
      if (bits != 16) throw fail(std::to_string(bits) + "-bit samples (need 16-bit)");
      sample_rate = static_cast<int>(read_u32le(chunk + 12));
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (!have_fmt) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (data_size % 2 != 0) throw fail("odd data chunk size");

  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(data_size / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const auto s = static_cast<std::int16_t>(read_u16le(data + 2 * i));
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

void save_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::string out;
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  out += "RIFF";
  put_u32le(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32le(out, 16);
  put_u16le(out, 1);
  put_u16le(out, 1);
  put_u32le(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32le(out, static_cast<std::uint32_t>(wave.sample_rate * 2));
  put_u16le(out, 2);
  put_u16le(out, 16);
  out += "data";
  put_u32le(out, data_bytes);
  for (double s : wave.samples) {
    const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
    const auto q = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16le(out, static_cast<std::uint16_t>(q));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("save_wav: cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("save_wav: write failed for " + path.string());
}

Waveform resample(const Waveform& wave, int target_rate) {
  if (wave.sample_rate == target_rate) return wave;
  if (target_rate <= 0 || wave.sample_rate % target_rate != 0 || target_rate != 8000) {
    throw Error("resample: unsupported rate pair " + std::to_string(wave.sample_rate) + " -> " +
                std::to_string(target_rate));
  }
  const int factor = wave.sample_rate / target_rate;
  // Pass band flat to ~3.7 kHz, stop band from ~4.0 kHz at 16 kHz input.
  const double cutoff = 0.5 / factor * 0.9625;
  const int half = 128 * factor / 2;
  static thread_local std::vector<double> cached;
  static thread_local int cached_factor = 0;
  if (cached_factor != factor) {
    cached = lowpass_taps(cutoff, half, 8.6);
    cached_factor = factor;
  }
  const std::vector<double>& taps = cached;

  const auto n = static_cast<std::ptrdiff_t>(wave.samples.size());
  Waveform out;
  out.sample_rate = target_rate;
  out.utterance_id = wave.utterance_id;
  out.speaker_id = wave.speaker_id;
  out.samples.resize(static_cast<std::size_t>((n + factor - 1) / factor));
  if (n == 0) return out;
  for (std::size_t k = 0; k < out.samples.size(); ++k) {
    const std::ptrdiff_t centre = static_cast<std::ptrdiff_t>(k) * factor;
    double acc = 0.0;
    for (int j = -half; j <= half; ++j) {
      // Edge samples are replicated so constant signals pass unchanged.
      const std::ptrdiff_t idx = std::clamp<std::ptrdiff_t>(centre + j, 0, n - 1);
      acc += taps[static_cast<std::size_t>(j + half)] * wave.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[k] = acc;
  }
  return out;
}

}  // namespace mpc
