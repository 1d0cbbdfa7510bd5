#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mpc/features.hpp"

namespace mpc {

/// Toy speech from a source-filter model: each character is a formant
/// pattern excited by a glottal pulse train, frication noise or both. Speakers
/// differ in pitch, vocal tract length, gain, tempo and noise floor.
struct SyntheticCorpusConfig {
  std::size_t num_utterances = 2000;
  std::size_t num_speakers = 20;
  std::string alphabet = "abcdefgh";
  std::size_t min_chars = 2;
  std::size_t max_chars = 4;
  int sample_rate = 8000;
  double min_char_ms = 100.0;
  double max_char_ms = 180.0;
  double max_gap_ms = 60.0;
  double edge_silence_ms = 100.0;
  double min_noise = 0.002;
  double max_noise = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticUtterance {
  Waveform wave;
  std::string transcript;
};

/// Utterance `index` depends only on (config, index).
SyntheticUtterance synthesize_utterance(const SyntheticCorpusConfig& cfg, std::size_t index);
std::vector<SyntheticUtterance> synthesize_corpus(const SyntheticCorpusConfig& cfg);

}  // namespace mpc
