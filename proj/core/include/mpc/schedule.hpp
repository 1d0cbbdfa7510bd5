#pragma once

#include <cstddef>
#include <limits>

#include "mpc/autograd.hpp"
#include "mpc/rng.hpp"

namespace mpc {

struct ScheduleConfig {
  double k = 0.5;
  std::size_t d_model = 256;
  std::size_t warmup_n = 8000;
  /// false: k * d_model^{+0.5} * min(...), as published for this method.
  /// true: the usual Transformer scaling k * d_model^{-0.5} * min(...).
  bool canonical_noam = false;
  std::size_t plateau_patience_epochs = 5;
  double plateau_divisor = 10.0;
  std::size_t plateau_max_applications = 1;

  void validate() const;
};

/// lrate = k * d_model^{0.5} * min(n^{-0.5}, n * warmup_n^{-1.5}) for n >= 1.
double lr_at_step(std::size_t n, const ScheduleConfig& cfg);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables clipping
};

struct AdamState {
  std::size_t step = 0;
  ParamStore m;
  ParamStore v;
};

struct AdamReport {
  bool applied = false;
  bool clipped = false;
  double grad_norm = 0.0;
};

/// One Adam update with bias correction. The L2 term weight_decay * param is
/// added to the (clipped) gradient before the moment update. Non-finite
/// gradients leave params and state untouched and report applied = false.
AdamReport adam_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr, double weight_decay,
                     const AdamConfig& cfg = {});

struct PlateauState {
  double best = std::numeric_limits<double>::infinity();
  std::size_t epochs_without_improvement = 0;
  std::size_t applications = 0;
  std::size_t epochs = 0;
};

enum class PlateauAction { NoAction, DivideLr };

/// Call once per epoch. An epoch improves when its loss is strictly below the
/// best so far. Returns DivideLr when the count of non-improving epochs
/// reaches the patience and divisions remain.
PlateauAction plateau_update(PlateauState& state, double epoch_val_loss, const ScheduleConfig& cfg);

/// model_token with probability `rate`, otherwise gold_token.
std::size_t scheduled_sample(std::size_t gold_token, std::size_t model_token, double rate, Rng& rng);

}  // namespace mpc
