#include "mpc/schedule.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

namespace mpc {

void ScheduleConfig::validate() const {
  if (!(k > 0.0)) throw Error("schedule: k must be positive");
  if (warmup_n < 1) throw Error("schedule: warmup_n must be >= 1");
  if (d_model == 0) throw Error("schedule: d_model must be positive");
  if (!(plateau_divisor > 0.0)) throw Error("schedule: plateau_divisor must be positive");
}

double lr_at_step(std::size_t n, const ScheduleConfig& cfg) {
  if (n == 0) throw Error("lr_at_step: step numbers start at 1");
  cfg.validate();
  const double step = static_cast<double>(n);
  const double warm = static_cast<double>(cfg.warmup_n);
  const double scale = std::pow(static_cast<double>(cfg.d_model), cfg.canonical_noam ? -0.5 : 0.5);
  return cfg.k * scale * std::min(1.0 / std::sqrt(step), step * std::pow(warm, -1.5));
}

AdamReport adam_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr, double weight_decay,
                     const AdamConfig& cfg) {
  AdamReport report;
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw Error("adam_step: gradient for unknown parameter '" + name + "'");
    for (double v : g.data()) sq += v * v;
  }
  report.grad_norm = std::sqrt(sq);
  if (!std::isfinite(report.grad_norm)) {
    spdlog::warn("adam_step: non-finite gradient at step {}; batch skipped", state.step + 1);
    return report;
  }
  double clip = 1.0;
  if (cfg.clip_norm > 0.0 && report.grad_norm > cfg.clip_norm) {
    clip = cfg.clip_norm / report.grad_norm;
    report.clipped = true;
    spdlog::debug("adam_step: gradient norm {:.4g} clipped to {:.4g}", report.grad_norm, cfg.clip_norm);
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    if (git == grads.end() && weight_decay == 0.0) continue;
    Tensor& m = state.m.try_emplace(name, p.shape()).first->second;
    Tensor& v = state.v.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = (git == grads.end() ? 0.0 : clip * git->second[i]) + weight_decay * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
  report.applied = true;
  return report;
}

PlateauAction plateau_update(PlateauState& state, double epoch_val_loss, const ScheduleConfig& cfg) {
  ++state.epochs;
  if (epoch_val_loss < state.best) {
    state.best = epoch_val_loss;
    state.epochs_without_improvement = 0;
    return PlateauAction::NoAction;
  }
  ++state.epochs_without_improvement;
  if (state.epochs_without_improvement >= cfg.plateau_patience_epochs &&
      state.applications < cfg.plateau_max_applications) {
    ++state.applications;
    state.epochs_without_improvement = 0;
    return PlateauAction::DivideLr;
  }
  return PlateauAction::NoAction;
}

std::size_t scheduled_sample(std::size_t gold_token, std::size_t model_token, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error("scheduled_sample: rate must be in [0, 1]");
  return rng.uniform() < rate ? model_token : gold_token;
}

}  // namespace mpc
