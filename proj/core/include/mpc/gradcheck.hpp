#pragma once

#include <functional>
#include <string>

#include "mpc/autograd.hpp"

namespace mpc {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Builds a scalar loss on a graph bound to the given parameters.
using LossBuilder = std::function<Var(Graph&)>;

/// Compares backward() against central differences for every element of every
/// parameter in `params`. Relative error is |a - n| / max(|a|, |n|, 1e-8).
/// `params` is perturbed in place and restored before returning.
///
/// Throws mpc::Error if step <= 0 or if two evaluations of `loss` at the same
/// point disagree (the loss must be deterministic).
GradCheckResult finite_diff_check(const LossBuilder& loss, ParamStore& params, double step = 1e-5);

/// Same, but only parameters accepted by `selected` are perturbed and compared.
GradCheckResult finite_diff_check(const LossBuilder& loss, ParamStore& params, double step,
                                  const std::function<bool(const std::string&)>& selected);

}  // namespace mpc
