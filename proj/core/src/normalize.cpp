#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "mpc/features.hpp"

namespace mpc {

namespace {

constexpr double kStdFloor = 1e-8;

struct Accumulator {
  std::vector<double> sum;
  std::vector<double> sum_sq;
  std::size_t count = 0;

  void add(const Tensor& frames) {
    if (sum.empty()) {
      sum.assign(frames.cols(), 0.0);
      sum_sq.assign(frames.cols(), 0.0);
    }
    if (frames.cols() != sum.size()) throw Error("per_speaker_normalize: inconsistent feature dimension");
    for (std::size_t t = 0; t < frames.rows(); ++t) {
      for (std::size_t j = 0; j < frames.cols(); ++j) sum[j] += frames.at(t, j);
    }
    count += frames.rows();
  }

  // Second pass for the variance keeps the result exact for large offsets.
  void add_deviation(const Tensor& frames, const std::vector<double>& mu) {
    for (std::size_t t = 0; t < frames.rows(); ++t) {
      for (std::size_t j = 0; j < frames.cols(); ++j) {
        const double d = frames.at(t, j) - mu[j];
        sum_sq[j] += d * d;
      }
    }
  }
};

SpeakerStats::Moments finish(const Accumulator& mean_acc, const Accumulator& var_acc) {
  SpeakerStats::Moments m;
  const auto n = static_cast<double>(mean_acc.count);
  m.mean.resize(mean_acc.sum.size());
  m.stddev.resize(mean_acc.sum.size());
  for (std::size_t j = 0; j < m.mean.size(); ++j) {
    m.mean[j] = mean_acc.sum[j] / n;
    m.stddev[j] = std::max(std::sqrt(var_acc.sum_sq[j] / n), kStdFloor);
  }
  return m;
}

}  // namespace

SpeakerStats compute_speaker_stats(const std::vector<FeatureSequence>& seqs) {
  std::map<std::string, Accumulator> per_speaker;
  Accumulator global;
  for (const auto& s : seqs) {
    if (s.speaker_id.empty()) throw Error("per_speaker_normalize: utterance '" + s.utterance_id + "' has no speaker id");
    per_speaker[s.speaker_id].add(s.frames);
    global.add(s.frames);
  }
  SpeakerStats stats;
  if (global.count == 0) throw Error("per_speaker_normalize: no frames");

  std::map<std::string, std::vector<double>> means;
  for (auto& [speaker, acc] : per_speaker) {
    if (acc.count == 0) throw Error("per_speaker_normalize: speaker '" + speaker + "' has no frames");
    std::vector<double> mu(acc.sum.size());
    for (std::size_t j = 0; j < mu.size(); ++j) mu[j] = acc.sum[j] / static_cast<double>(acc.count);
    means[speaker] = std::move(mu);
  }
  std::vector<double> global_mu(global.sum.size());
  for (std::size_t j = 0; j < global_mu.size(); ++j) global_mu[j] = global.sum[j] / static_cast<double>(global.count);

  std::map<std::string, Accumulator> deviations;
  Accumulator global_dev;
  global_dev.sum_sq.assign(global.sum.size(), 0.0);
  for (const auto& s : seqs) {
    auto& acc = deviations[s.speaker_id];
    if (acc.sum_sq.empty()) acc.sum_sq.assign(s.frames.cols(), 0.0);
    acc.add_deviation(s.frames, means[s.speaker_id]);
    global_dev.add_deviation(s.frames, global_mu);
  }
  for (auto& [speaker, acc] : per_speaker) stats.speakers[speaker] = finish(acc, deviations[speaker]);
  stats.global = finish(global, global_dev);
  return stats;
}

FeatureSequence SpeakerStats::apply(const FeatureSequence& seq) const {
  const Moments* m = &global;
  if (auto it = speakers.find(seq.speaker_id); it != speakers.end()) {
    m = &it->second;
  } else {
    spdlog::warn("speaker '{}' (utterance '{}') has no statistics; using global statistics", seq.speaker_id,
                 seq.utterance_id);
  }
  if (seq.frames.rows() > 0 && seq.frames.cols() != m->mean.size()) {
    throw Error("normalize: feature dimension " + std::to_string(seq.frames.cols()) + " does not match stats dimension " +
                std::to_string(m->mean.size()));
  }
  FeatureSequence out = seq;
  for (std::size_t t = 0; t < out.frames.rows(); ++t) {
    for (std::size_t j = 0; j < out.frames.cols(); ++j) {
      out.frames.at(t, j) = (out.frames.at(t, j) - m->mean[j]) / m->stddev[j];
    }
  }
  return out;
}

NormalizedCorpus per_speaker_normalize(const std::vector<FeatureSequence>& seqs) {
  NormalizedCorpus corpus;
  corpus.stats = compute_speaker_stats(seqs);
  corpus.sequences.reserve(seqs.size());
  for (const auto& s : seqs) corpus.sequences.push_back(corpus.stats.apply(s));
  return corpus;
}

Tensor stack_frames(const Tensor& frames, std::size_t factor) {
  if (factor == 0) throw Error("stack_frames: factor must be >= 1");
  const std::size_t t_out = frames.rows() / factor;
  const std::size_t d = frames.cols();
  // Row-major storage makes stacking a prefix reshape.
  std::vector<double> data(frames.data().begin(),
                           frames.data().begin() + static_cast<std::ptrdiff_t>(t_out * factor * d));
  return Tensor(Shape{t_out, factor * d}, std::move(data));
}

FeatureSequence stack_frames(const FeatureSequence& seq, std::size_t factor) {
  FeatureSequence out;
  out.frames = stack_frames(seq.frames, factor);
  out.frame_shift_ms = seq.frame_shift_ms * static_cast<double>(factor);
  out.frame_length_ms = seq.frame_length_ms + seq.frame_shift_ms * static_cast<double>(factor - 1);
  out.utterance_id = seq.utterance_id;
  out.speaker_id = seq.speaker_id;
  return out;
}

}  // namespace mpc
