#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mpc/tensor.hpp"

namespace mpc {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 8000;
  std::string utterance_id;
  std::string speaker_id;
};

/// Log-mel filterbank frames, T x d_mel, time-major.
struct FeatureSequence {
  Tensor frames{Shape{0, 0}};
  double frame_shift_ms = 10.0;
  double frame_length_ms = 25.0;
  std::string utterance_id;
  std::string speaker_id;

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
};

struct FeatureConfig {
  std::size_t d_mel = 40;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  std::size_t fft_size = 0;  // 0: smallest power of two >= window length
  double mel_low_hz = 20.0;
  double mel_high_hz = 0.0;  // 0: Nyquist
  double log_floor = 1.1920928955078125e-07;
  double preemphasis = 0.97;

  void validate(int sample_rate) const;
};

// --- audio -----------------------------------------------------------------

/// Reads a 16-bit PCM mono RIFF/WAVE file. Samples are scaled by 1/32768.
Waveform load_wav(const std::filesystem::path& path);
/// Writes 16-bit PCM mono. Samples are clamped to [-1, 1) and scaled by 32768.
void save_wav(const std::filesystem::path& path, const Waveform& wave);

/// Low-pass (Kaiser-windowed sinc) then decimate by sample_rate/target_rate.
/// Output length is ceil(N / factor). Only integer factors are supported and
/// the result must land on 8 kHz.
Waveform resample(const Waveform& wave, int target_rate);

// --- features --------------------------------------------------------------

/// Number of full frames for N samples, window L, hop S: 1 + floor((N-L)/S),
/// or 0 when N < L.
std::size_t frame_count(std::size_t num_samples, std::size_t window, std::size_t hop);

/// Centre frequencies (Hz) of the mel triangles, lowest first.
std::vector<double> mel_center_frequencies(const FeatureConfig& cfg, int sample_rate);

/// Power-spectrum mel filterbank: pre-emphasis, Hamming window, |FFT|^2,
/// triangular HTK-mel filters, log(max(energy, log_floor)).
FeatureSequence fbank(const Waveform& wave, const FeatureConfig& cfg = {});

/// Per-speaker mean/std of every feature dimension plus a global fallback.
struct SpeakerStats {
  struct Moments {
    std::vector<double> mean;
    std::vector<double> stddev;
  };
  std::map<std::string, Moments> speakers;
  Moments global;

  /// Normalizes with the sequence's speaker statistics, falling back to the
  /// global statistics (with a warning) for unseen speakers.
  FeatureSequence apply(const FeatureSequence& seq) const;
};

/// Stats are accumulated over all frames of each speaker; std is floored at 1e-8.
SpeakerStats compute_speaker_stats(const std::vector<FeatureSequence>& seqs);

struct NormalizedCorpus {
  std::vector<FeatureSequence> sequences;
  SpeakerStats stats;
};

NormalizedCorpus per_speaker_normalize(const std::vector<FeatureSequence>& seqs);

/// Concatenates `factor` consecutive frames into one; trailing frames that do
/// not fill a group are dropped.
FeatureSequence stack_frames(const FeatureSequence& seq, std::size_t factor);
Tensor stack_frames(const Tensor& frames, std::size_t factor);

// --- files -----------------------------------------------------------------

struct ManifestEntry {
  std::string utterance_id;
  std::string wav_path;
  std::string speaker_id;
  std::string transcript;
};

/// `utterance_id<TAB>wav_path<TAB>speaker_id<TAB>transcript`, one per line.
/// Relative wav paths are resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Feature archive: repeated records of
///   "MPCF" | version u32 | id_len u32 | id | T u32 | d u32 | T*d float32
/// all little-endian, row-major. Speaker ids are not stored; callers join on
/// utterance id with the manifest.
inline constexpr std::uint32_t kFeatureArchiveVersion = 1;

void write_feature_archive(const std::filesystem::path& path, const std::vector<FeatureSequence>& seqs);
std::vector<FeatureSequence> read_feature_archive(const std::filesystem::path& path);

/// Speaker stats in the archive container: one record per speaker with T = 2
/// (mean row, std row). The global fallback is stored under the id "*".
void write_speaker_stats(const std::filesystem::path& path, const SpeakerStats& stats);
SpeakerStats read_speaker_stats(const std::filesystem::path& path);

}  // namespace mpc
