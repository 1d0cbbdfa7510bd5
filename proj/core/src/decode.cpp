#include "mpc/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <spdlog/spdlog.h>

namespace mpc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Partial {
  std::vector<TokenId> tokens;
  double attention = 0.0;
  CtcPrefixScorer::State ctc;
  double joint = 0.0;
};

bool better(double a, double b) { return a > b; }

}  // namespace

void BeamOptions::validate() const {
  if (beam_width == 0) throw Error("beam search: beam width must be >= 1");
  if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw Error("beam search: ctc weight must be in [0, 1]");
}

double joint_score(double ctc, double attention, double ctc_weight) {
  if (ctc_weight == 0.0) return attention;
  if (ctc_weight == 1.0) return ctc;
  return ctc_weight * ctc + (1.0 - ctc_weight) * attention;
}

Hypothesis joint_beam_decode(const AttentionScorer& attention, const Tensor& ctc_log_probs, std::size_t vocab_size,
                             const BeamOptions& options) {
  options.validate();
  if (vocab_size <= Vocabulary::kFirstChar) throw Error("beam search: vocabulary has no characters");
  const bool use_ctc = options.ctc_weight > 0.0;
  const bool use_att = options.ctc_weight < 1.0;
  CtcPrefixScorer scorer(ctc_log_probs, Vocabulary::kBlank);
  const std::size_t max_len = options.max_length == 0 ? scorer.frames() : options.max_length;

  std::vector<Partial> beam(1);
  beam[0].ctc = scorer.initial();
  std::vector<Hypothesis> ended;
  double best_ended = kNegInf;

  for (std::size_t len = 0; len <= max_len && !beam.empty(); ++len) {
    std::vector<Partial> next;
    for (const Partial& hyp : beam) {
      std::vector<double> att_lp(vocab_size, 0.0);
      if (use_att) {
        std::vector<TokenId> prefix{Vocabulary::kSos};
        prefix.insert(prefix.end(), hyp.tokens.begin(), hyp.tokens.end());
        att_lp = attention(prefix);
        if (att_lp.size() != vocab_size) throw Error("beam search: attention scorer returned wrong vocabulary size");
      }

      Hypothesis done;
      done.tokens = hyp.tokens;
      done.attention_score = hyp.attention + att_lp[Vocabulary::kEos];
      done.ctc_score = use_ctc ? scorer.full_score(hyp.ctc) : 0.0;
      done.joint_score = joint_score(done.ctc_score, done.attention_score, options.ctc_weight);
      best_ended = std::max(best_ended, done.joint_score);
      ended.push_back(std::move(done));

      if (len == max_len) continue;
      for (TokenId c = Vocabulary::kFirstChar; c < vocab_size; ++c) {
        Partial ext;
        ext.tokens = hyp.tokens;
        ext.tokens.push_back(c);
        ext.attention = hyp.attention + att_lp[c];
        if (use_ctc) {
          ext.ctc = scorer.extend(hyp.ctc, c);
        } else {
          ext.ctc.prefix = ext.tokens;
        }
        ext.joint = joint_score(ext.ctc.score, ext.attention, options.ctc_weight);
        next.push_back(std::move(ext));
      }
    }
    std::stable_sort(next.begin(), next.end(), [](const Partial& a, const Partial& b) { return better(a.joint, b.joint); });
    if (next.size() > options.beam_width) next.resize(options.beam_width);
    // Both score components only decrease as a hypothesis grows, so nothing
    // still in the beam can beat a finished hypothesis that already scores
    // at least as high.
    while (!next.empty() && !(next.back().joint > best_ended)) next.pop_back();
    beam = std::move(next);
  }

  auto best = std::max_element(ended.begin(), ended.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return better(b.joint_score, a.joint_score);
  });
  if (!std::isfinite(best->joint_score)) {
    spdlog::warn("beam search: no hypothesis with finite score (best {})", best->joint_score);
  }
  return *best;
}

Hypothesis joint_beam_decode(const ParamStore& params, const ModelConfig& cfg, const Tensor& frames,
                             const BeamOptions& options) {
  Graph enc_graph(&params);
  const Var enc = encoder_forward(enc_graph, cfg.encoder, enc_graph.constant(frames), EncoderMode::Finetune);
  const Tensor encoded = enc.value();
  const Tensor log_probs = ctc_log_probs(enc_graph, enc).value();
  const AttentionScorer scorer = [&](const std::vector<TokenId>& prefix) {
    Graph g(&params);
    const Var logits = decoder_forward(g, cfg.decoder, g.constant(encoded), prefix);
    const Tensor lp = log_softmax(logits).value();
    const auto last = lp.row(lp.rows() - 1);
    return std::vector<double>(last.begin(), last.end());
  };
  return joint_beam_decode(scorer, log_probs, cfg.decoder.vocab_size, options);
}

// --- scoring -----------------------------------------------------------------

double EditCounts::rate() const {
  if (reference_length == 0) {
    if (distance() == 0) return 0.0;
    return std::numeric_limits<double>::infinity();
  }
  return static_cast<double>(distance()) / static_cast<double>(reference_length);
}

EditCounts& EditCounts::operator+=(const EditCounts& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  reference_length += o.reference_length;
  return *this;
}

EditCounts cer(std::u32string_view reference, std::u32string_view hypothesis) {
  const std::size_t n = reference.size();
  const std::size_t m = hypothesis.size();
  if (n == 0 && m == 0) spdlog::debug("cer: empty reference and hypothesis");
  // cost[i][j]: distance between reference[:i] and hypothesis[:j].
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  EditCounts out;
  out.reference_length = n;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1)) {
      if (reference[i - 1] != hypothesis[j - 1]) ++out.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++out.deletions;
      --i;
    } else {
      ++out.insertions;
      --j;
    }
  }
  return out;
}

EditCounts cer_utf8(std::string_view reference, std::string_view hypothesis) {
  return cer(utf8_decode(reference), utf8_decode(hypothesis));
}

void EvalReport::add(EvalEntry entry) {
  totals += entry.edits;
  entries.push_back(std::move(entry));
}

void EvalReport::write_text(std::ostream& os) const {
  os << "utterances: " << entries.size() << "\n";
  os << "reference characters: " << totals.reference_length << "\n";
  os << "substitutions: " << totals.substitutions << " deletions: " << totals.deletions
     << " insertions: " << totals.insertions << "\n";
  os << "CER: " << corpus_cer() * 100.0 << "%\n";
  for (const EvalEntry& e : entries) {
    os << e.utterance_id << "  ref: " << e.reference << "\n";
    os << std::string(e.utterance_id.size(), ' ') << "  hyp: " << e.hypothesis << "  (S=" << e.edits.substitutions
       << " D=" << e.edits.deletions << " I=" << e.edits.insertions << ")\n";
  }
}

void EvalReport::write_tsv(std::ostream& os) const {
  for (const EvalEntry& e : entries) {
    os << e.utterance_id << '\t' << e.edits.rate() << '\t' << e.reference << '\t' << e.hypothesis << '\n';
  }
}

}  // namespace mpc
