#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "mpc/ctc.hpp"
#include "mpc/model.hpp"
#include "mpc/vocab.hpp"

namespace mpc {

struct Hypothesis {
  std::vector<TokenId> tokens;  // characters only
  double attention_score = 0.0;
  double ctc_score = 0.0;
  double joint_score = 0.0;
};

/// Next-token log distribution (length = vocab size) after `prefix`, where
/// prefix[0] is <sos>.
using AttentionScorer = std::function<std::vector<double>(const std::vector<TokenId>& prefix)>;

struct BeamOptions {
  std::size_t beam_width = 10;
  double ctc_weight = 0.3;
  std::size_t max_length = 0;  // 0: number of CTC frames

  void validate() const;
};

/// lambda * ctc + (1 - lambda) * attention; the weight-0 side is ignored so
/// that -inf scores on the unused side never produce NaN.
double joint_score(double ctc, double attention, double ctc_weight);

/// One-pass beam search. Each expansion of a partial hypothesis by a
/// character is scored with the CTC prefix score; expansion by <eos> uses the
/// complete-sequence CTC score. At max_length only <eos> may follow.
Hypothesis joint_beam_decode(const AttentionScorer& attention, const Tensor& ctc_log_probs, std::size_t vocab_size,
                             const BeamOptions& options);

/// Runs the fine-tuned encoder, CTC head and decoder on raw frames.
Hypothesis joint_beam_decode(const ParamStore& params, const ModelConfig& cfg, const Tensor& frames,
                             const BeamOptions& options);

// --- scoring -----------------------------------------------------------------

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_length = 0;

  std::size_t distance() const { return substitutions + deletions + insertions; }
  /// distance / reference_length; 0 when both sides are empty.
  double rate() const;
  EditCounts& operator+=(const EditCounts& o);
};

/// Unit-cost Levenshtein alignment over Unicode scalar values.
EditCounts cer(std::u32string_view reference, std::u32string_view hypothesis);
EditCounts cer_utf8(std::string_view reference, std::string_view hypothesis);

struct EvalEntry {
  std::string utterance_id;
  std::string reference;
  std::string hypothesis;
  EditCounts edits;
};

struct EvalReport {
  std::vector<EvalEntry> entries;
  EditCounts totals;

  void add(EvalEntry entry);
  double corpus_cer() const { return totals.rate(); }
  /// Human-readable summary followed by one line per utterance.
  void write_text(std::ostream& os) const;
  /// `id<TAB>cer<TAB>ref<TAB>hyp`, one line per utterance.
  void write_tsv(std::ostream& os) const;
};

}  // namespace mpc
