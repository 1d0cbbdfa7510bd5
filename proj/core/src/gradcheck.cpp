#include "mpc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mpc {

namespace {
double evaluate(const LossBuilder& loss, const ParamStore& params) {
  Graph g(&params);
  return loss(g).value().item();
}
}  // namespace

GradCheckResult finite_diff_check(const LossBuilder& loss, ParamStore& params, double step) {
  return finite_diff_check(loss, params, step, {});
}

GradCheckResult finite_diff_check(const LossBuilder& loss, ParamStore& params, double step,
                                  const std::function<bool(const std::string&)>& selected) {
  if (!(step > 0.0)) throw Error("finite_diff_check: step must be positive");

  Gradients analytic;
  double base = 0.0;
  {
    Graph g(&params);
    Var l = loss(g);
    base = l.value().item();
    analytic = g.backward(l);
  }
  if (const double again = evaluate(loss, params); again != base) {
    throw Error("finite_diff_check: loss is not deterministic (" + std::to_string(base) + " vs " +
                std::to_string(again) + ")");
  }

  GradCheckResult result;
  for (auto& [name, tensor] : params) {
    if (selected && !selected(name)) continue;
    const auto it = analytic.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double original = tensor[i];
      tensor[i] = original + step;
      const double plus = evaluate(loss, params);
      tensor[i] = original - step;
      const double minus = evaluate(loss, params);
      tensor[i] = original;

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double err = std::fabs(a - numeric) / denom;
      ++result.checked;
      if (err > result.max_relative_error || !std::isfinite(err)) {
        result.max_relative_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst_param = name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace mpc
