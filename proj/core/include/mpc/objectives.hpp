#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

#include "mpc/autograd.hpp"
#include "mpc/rng.hpp"

namespace mpc {

// --- masked predictive coding -----------------------------------------------

/// Fraction of positions chosen per sequence and what happens to each chosen
/// position.
struct MaskPolicy {
  double select_ratio = 0.15;
  double p_zero = 0.8;
  double p_random = 0.1;
  double p_keep = 0.1;

  void validate() const;
};

enum class MaskAction { Zero, Random, Keep };

struct MaskedPosition {
  std::size_t position = 0;
  MaskAction action = MaskAction::Zero;
  std::size_t source = 0;  // frame copied in for MaskAction::Random
};

/// Mask decisions for one sequence of `length` positions, sorted by position.
struct MaskPlan {
  std::size_t length = 0;
  std::vector<MaskedPosition> masked;

  std::vector<std::size_t> positions() const;
  bool is_selected(std::size_t pos) const;
};

/// max(1, floor(select_ratio * length)) for length >= 1, else 0.
std::size_t masked_count(std::size_t length, double select_ratio);

/// Draws a fresh plan: positions uniformly without replacement, then an
/// independent Zero/Random/Keep draw per position. Consumes draws from `rng`,
/// so successive calls give different plans.
MaskPlan sample_mask_plan(std::size_t length, const MaskPolicy& policy, Rng& rng);

/// The encoder input after masking plus what the loss compares against.
struct PredictiveTargets {
  Tensor original;
  Tensor masked_input;
  MaskPlan plan;
};

PredictiveTargets apply_mask(const Tensor& frames, const MaskPlan& plan);

/// Mean absolute error between prediction and the original frames over the
/// elements of masked positions only. Returns 0 (and warns) for an empty plan.
Var mpc_loss(Var prediction, const PredictiveTargets& targets);

/// Text dump used by `inspect-masks`: one line per masked position.
void write_mask_plan(std::ostream& os, const MaskPlan& plan);

// --- autoregressive predictive coding ---------------------------------------

inline constexpr std::size_t kApcDefaultShift = 3;

/// sum_{i < T-n} |x[i+n] - y[i]| summed over all feature elements.
Var apc_loss(Var x, Var y, std::size_t shift = kApcDefaultShift);

// --- contrastive predictive coding ------------------------------------------

/// -log softmax(logits)[positive] for a single set of N candidate scores.
Var cpc_infonce_loss(Var logits, std::size_t positive);
/// Mean of the per-row InfoNCE losses of an M x N score matrix.
Var cpc_infonce_loss(Var logits, const std::vector<std::size_t>& positives);

/// One anchor (context position t) and its N candidates for offset k.
struct ContrastiveSample {
  std::size_t anchor = 0;
  std::size_t offset = 1;
  std::vector<std::size_t> candidates;  // positions; candidates[positive] = anchor + offset
  std::size_t positive = 0;
};

/// For every anchor t with t + k < T and every offset k in [1, max_offset],
/// draws N-1 negatives uniformly from the other positions of the sequence.
/// The positive is placed at a random slot.
std::vector<ContrastiveSample> sample_contrastive(std::size_t length, std::size_t max_offset,
                                                  std::size_t num_candidates, Rng& rng);

/// Log-bilinear scores f = exp(z_j^T W_k c_t): context rows c (T x C),
/// latents z (T x Z), one projection W_k (C x Z) per offset.
Var cpc_scores(Var context, Var latents, std::span<const Var> projections,
               const std::vector<ContrastiveSample>& samples);

}  // namespace mpc
