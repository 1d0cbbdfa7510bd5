#pragma once

#include <cstddef>
#include <vector>

#include "mpc/autograd.hpp"

namespace mpc {

using TokenId = std::size_t;

/// Shortest frame count that can emit `labels`: one frame per label plus one
/// blank between each pair of equal neighbours.
std::size_t ctc_min_frames(const std::vector<TokenId>& labels);

/// log P(labels | log_probs) summed over all blank-augmented alignments
/// (forward recursion in log space). -inf when the labels cannot fit.
double ctc_log_likelihood(const Tensor& log_probs, const std::vector<TokenId>& labels, TokenId blank = 0);

/// Differentiable -log P(labels). Infeasible label sequences give +inf with a
/// logged diagnostic and contribute no gradient.
Var ctc_loss(Var log_probs, const std::vector<TokenId>& labels, TokenId blank = 0);

/// Incremental CTC prefix scores for one utterance (one-pass joint decoding).
///
/// For a prefix g the scorer keeps r_t^n(g) and r_t^b(g), the probabilities
/// of having emitted exactly g by frame t with the last frame non-blank or
/// blank. prefix_score(g + c) = log sum_t Phi_{t-1}(g) y_t(c) is the
/// probability that the collapsed CTC output starts with g + c; the empty
/// prefix scores log 1 = 0. full_score(g) = log(r_T^n + r_T^b) equals
/// ctc_log_likelihood(g).
class CtcPrefixScorer {
 public:
  struct State {
    std::vector<TokenId> prefix;
    std::vector<double> r_nonblank;  // log r_t^n, t = 0..T-1
    std::vector<double> r_blank;     // log r_t^b
    double score = 0.0;              // prefix score of `prefix`
  };

  CtcPrefixScorer(const Tensor& log_probs, TokenId blank = 0);

  State initial() const;
  /// State for prefix + token, with its prefix score.
  State extend(const State& state, TokenId token) const;
  /// log P(CTC output == state.prefix).
  double full_score(const State& state) const;

  std::size_t frames() const { return frames_; }

 private:
  Tensor log_probs_;
  TokenId blank_;
  std::size_t frames_;
};

/// Convenience wrappers over CtcPrefixScorer.
double ctc_prefix_score(const Tensor& log_probs, const std::vector<TokenId>& prefix, TokenId blank = 0);
double ctc_full_score(const Tensor& log_probs, const std::vector<TokenId>& sequence, TokenId blank = 0);

double log_add(double a, double b);

}  // namespace mpc
