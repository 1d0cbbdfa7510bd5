#include "mpc/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "mpc/rng.hpp"
#include "mpc/vocab.hpp"

namespace mpc {

namespace {

struct Speaker {
  double f0 = 140.0;          // glottal pitch, Hz
  double formant_scale = 1.0;  // vocal tract length
  double gain = 0.5;
  double noise = 0.005;
  double tempo = 1.0;  // duration scale
};

Speaker make_speaker(const SyntheticCorpusConfig& cfg, std::size_t s) {
  Rng rng = Rng(cfg.seed).substream("speaker").substream(static_cast<std::uint64_t>(s));
  Speaker sp;
  sp.f0 = 90.0 + 130.0 * rng.uniform();
  sp.formant_scale = 0.88 + 0.24 * rng.uniform();
  sp.gain = 0.3 + 0.5 * rng.uniform();
  sp.noise = cfg.min_noise + (cfg.max_noise - cfg.min_noise) * rng.uniform();
  sp.tempo = 0.85 + 0.3 * rng.uniform();
  return sp;
}

// Every character is a voiced sound shaped by three formants, a frication
// band, or a mix of both. Characters beyond the table reuse it with shifted
// formants.
struct Phone {
  std::array<double, 3> formants;
  double voicing;    // weight of the pulse-train source
  double frication;  // weight of the noise source
};

constexpr std::array<Phone, 8> kPhones = {{
    {{730, 1090, 2440}, 1.0, 0.0},   // open vowel
    {{530, 1840, 2480}, 1.0, 0.0},   // front mid vowel
    {{270, 2290, 3010}, 1.0, 0.0},   // front close vowel
    {{570, 840, 2410}, 1.0, 0.0},    // back mid vowel
    {{300, 870, 2240}, 1.0, 0.0},    // back close vowel
    {{250, 1000, 2200}, 0.35, 0.0},  // nasal-like murmur
    {{1800, 2900, 3500}, 0.0, 1.0},  // sibilant
    {{400, 1600, 2600}, 0.5, 0.5},   // voiced fricative
}};

Phone phone_for(std::size_t index) {
  Phone p = kPhones[index % kPhones.size()];
  const double shift = 1.0 + 0.12 * static_cast<double>(index / kPhones.size());
  for (double& f : p.formants) f *= shift;
  return p;
}

/// Two-pole resonator with unity gain at DC, updated per sample.
class Resonator {
 public:
  double step(double x, double freq, double bandwidth, double sr) {
    const double r = std::exp(-std::numbers::pi * bandwidth / sr);
    const double b1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq / sr);
    const double b2 = -r * r;
    const double y = (1.0 - b1 - b2) * x + b1 * y1_ + b2 * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double y1_ = 0.0;
  double y2_ = 0.0;
};

struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
  Phone phone{};
  bool silent = false;
};

}  // namespace

void SyntheticCorpusConfig::validate() const {
  if (num_speakers == 0) throw Error("synthetic corpus: num_speakers must be positive");
  if (utf8_decode(alphabet).empty()) throw Error("synthetic corpus: empty alphabet");
  if (min_chars == 0 || min_chars > max_chars) throw Error("synthetic corpus: need 1 <= min_chars <= max_chars");
  if (sample_rate < 8000) throw Error("synthetic corpus: sample rate below 8 kHz");
  if (!(min_char_ms > 20.0 && min_char_ms <= max_char_ms)) throw Error("synthetic corpus: bad character durations");
  if (!(min_noise >= 0.0 && min_noise <= max_noise)) throw Error("synthetic corpus: bad noise range");
}

SyntheticUtterance synthesize_utterance(const SyntheticCorpusConfig& cfg, std::size_t index) {
  cfg.validate();
  const std::u32string alphabet = utf8_decode(cfg.alphabet);
  const std::size_t speaker_index = index % cfg.num_speakers;
  const Speaker sp = make_speaker(cfg, speaker_index);
  Rng rng = Rng(cfg.seed).substream("utterance").substream(static_cast<std::uint64_t>(index));

  const std::size_t n_chars = cfg.min_chars + rng.uniform_int(cfg.max_chars - cfg.min_chars + 1);
  std::u32string text;
  for (std::size_t i = 0; i < n_chars; ++i) text.push_back(alphabet[rng.uniform_int(alphabet.size())]);

  const double sr = static_cast<double>(cfg.sample_rate);
  auto ms_to_samples = [&](double ms) { return static_cast<std::size_t>(std::lround(ms * sr / 1000.0)); };

  // Lay out silence and character segments on the time axis.
  std::vector<Segment> segments;
  std::size_t cursor = 0;
  auto add_silence = [&](double ms) {
    const std::size_t len = ms_to_samples(ms);
    if (len == 0) return;
    segments.push_back({cursor, len, Phone{}, true});
    cursor += len;
  };
  add_silence(cfg.edge_silence_ms * (0.5 + rng.uniform()));
  for (std::size_t ci = 0; ci < text.size(); ++ci) {
    const double ms = sp.tempo * (cfg.min_char_ms + (cfg.max_char_ms - cfg.min_char_ms) * rng.uniform());
    Segment s{cursor, ms_to_samples(ms), phone_for(alphabet.find(text[ci])), false};
    segments.push_back(s);
    cursor += s.length;
    if (ci + 1 < text.size() && rng.bernoulli(0.5)) add_silence(cfg.max_gap_ms * rng.uniform());
  }
  add_silence(cfg.edge_silence_ms * (0.5 + rng.uniform()));

  // Per-sample targets. Formants glide linearly into each character over
  // the first 25 ms from the previous voiced character's values.
  const std::size_t total = cursor;
  const std::size_t glide = ms_to_samples(25.0);
  const std::size_t ramp = std::max<std::size_t>(1, ms_to_samples(8.0));
  std::vector<double> samples(total, 0.0);
  std::array<Resonator, 3> voiced;
  std::array<Resonator, 2> fricated;
  std::array<double, 3> previous = {500.0, 1500.0, 2500.0};
  double phase = 0.0;
  const double pitch_drift = 0.15 * (rng.uniform() - 0.5);
  const std::array<double, 3> bandwidths = {80.0, 110.0, 160.0};
  const double nyquist_guard = 0.45 * sr;

  for (const Segment& seg : segments) {
    if (seg.silent) continue;
    std::array<double, 3> target{};
    for (std::size_t k = 0; k < 3; ++k) target[k] = std::min(seg.phone.formants[k] * sp.formant_scale, nyquist_guard);
    for (std::size_t n = 0; n < seg.length; ++n) {
      const std::size_t t = seg.start + n;
      const double mix = glide == 0 ? 1.0 : std::min(1.0, static_cast<double>(n) / static_cast<double>(glide));
      double env = 1.0;
      if (n < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n) / ramp);
      if (seg.length - n <= ramp) {
        env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(seg.length - n) / ramp));
      }
      const double progress = static_cast<double>(t) / static_cast<double>(total);
      const double f0 = sp.f0 * (1.0 + pitch_drift * (progress - 0.5));
      phase += f0 / sr;
      double pulse = 0.0;
      if (phase >= 1.0) {
        phase -= 1.0;
        pulse = 1.0;
      }
      double v = pulse * seg.phone.voicing * 6.0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double f = previous[k] + (target[k] - previous[k]) * mix;
        v = voiced[k].step(v, f, bandwidths[k], sr);
      }
      double f = 0.0;
      if (seg.phone.frication > 0.0) {
        f = rng.normal() * seg.phone.frication * 0.4;
        f = fricated[0].step(f, target[1], 600.0, sr);
        f = fricated[1].step(f, target[2], 900.0, sr) * 3.0;
      }
      samples[t] = sp.gain * env * (v + f);
    }
    previous = target;
  }

  double peak = 0.0;
  for (double s : samples) peak = std::max(peak, std::abs(s));
  const double norm = peak > 0.0 ? sp.gain / peak : 1.0;
  for (double& s : samples) s = std::clamp(s * norm + sp.noise * rng.normal(), -1.0, 1.0);

  SyntheticUtterance out;
  out.transcript = utf8_encode(text);
  out.wave.samples = std::move(samples);
  out.wave.sample_rate = cfg.sample_rate;
  out.wave.speaker_id = "spk" + std::to_string(speaker_index);
  char id[32];
  std::snprintf(id, sizeof id, "utt%06zu", index);
  out.wave.utterance_id = id;
  return out;
}

std::vector<SyntheticUtterance> synthesize_corpus(const SyntheticCorpusConfig& cfg) {
  std::vector<SyntheticUtterance> out;
  out.reserve(cfg.num_utterances);
  for (std::size_t i = 0; i < cfg.num_utterances; ++i) out.push_back(synthesize_utterance(cfg, i));
  return out;
}

}  // namespace mpc
