#include "mpc/ctc.hpp"

#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

namespace mpc {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_labels(const Tensor& log_probs, const std::vector<TokenId>& labels, TokenId blank) {
  if (log_probs.rank() != 2) throw Error("ctc: log_probs must be T x V, got " + shape_string(log_probs.shape()));
  if (blank >= log_probs.cols()) throw Error("ctc: blank id outside vocabulary");
  for (TokenId l : labels) {
    if (l >= log_probs.cols()) throw Error("ctc: label id " + std::to_string(l) + " outside vocabulary");
    if (l == blank) throw Error("ctc: labels must not contain the blank id");
  }
}

std::vector<TokenId> extend_with_blanks(const std::vector<TokenId>& labels, TokenId blank) {
  std::vector<TokenId> ext;
  ext.reserve(2 * labels.size() + 1);
  ext.push_back(blank);
  for (TokenId l : labels) {
    ext.push_back(l);
    ext.push_back(blank);
  }
  return ext;
}

bool can_skip(const std::vector<TokenId>& ext, std::size_t s, TokenId blank) {
  return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
}

// alpha[t * S + s] in log space.
std::vector<double> forward_table(const Tensor& lp, const std::vector<TokenId>& ext, TokenId blank) {
  const std::size_t T = lp.rows(), S = ext.size();
  std::vector<double> alpha(T * S, kNegInf);
  alpha[0] = lp.at(0, ext[0]);
  if (S > 1) alpha[1] = lp.at(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (can_skip(ext, s, blank)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = a == kNegInf ? kNegInf : a + lp.at(t, ext[s]);
    }
  }
  return alpha;
}

std::vector<double> backward_table(const Tensor& lp, const std::vector<TokenId>& ext, TokenId blank) {
  const std::size_t T = lp.rows(), S = ext.size();
  std::vector<double> beta(T * S, kNegInf);
  beta[(T - 1) * S + S - 1] = lp.at(T - 1, ext[S - 1]);
  if (S > 1) beta[(T - 1) * S + S - 2] = lp.at(T - 1, ext[S - 2]);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta[(t + 1) * S + s];
      if (s + 1 < S) b = log_add(b, beta[(t + 1) * S + s + 1]);
      if (s + 2 < S && can_skip(ext, s + 2, blank)) b = log_add(b, beta[(t + 1) * S + s + 2]);
      beta[t * S + s] = b == kNegInf ? kNegInf : b + lp.at(t, ext[s]);
    }
  }
  return beta;
}

double total_from_alpha(const std::vector<double>& alpha, std::size_t T, std::size_t S) {
  double total = alpha[(T - 1) * S + S - 1];
  if (S > 1) total = log_add(total, alpha[(T - 1) * S + S - 2]);
  return total;
}

}  // namespace

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

std::size_t ctc_min_frames(const std::vector<TokenId>& labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

double ctc_log_likelihood(const Tensor& log_probs, const std::vector<TokenId>& labels, TokenId blank) {
  check_labels(log_probs, labels, blank);
  const std::size_t T = log_probs.rows();
  if (T == 0) return labels.empty() ? 0.0 : kNegInf;
  if (ctc_min_frames(labels) > T) return kNegInf;
  const auto ext = extend_with_blanks(labels, blank);
  return total_from_alpha(forward_table(log_probs, ext, blank), T, ext.size());
}

Var ctc_loss(Var log_probs, const std::vector<TokenId>& labels, TokenId blank) {
  const Tensor& lp = log_probs.value();
  check_labels(lp, labels, blank);
  const std::size_t T = lp.rows();
  const auto ext = extend_with_blanks(labels, blank);
  const bool feasible = T > 0 && ctc_min_frames(labels) <= T;
  if (!feasible) {
    spdlog::warn("ctc_loss: {} labels need at least {} frames, have {}", labels.size(), ctc_min_frames(labels), T);
    const Var ins[] = {log_probs};
    return log_probs.graph->record(Tensor::scalar(std::numeric_limits<double>::infinity()), ins,
                                   [](Graph&, std::size_t) {});
  }
  auto alpha = forward_table(lp, ext, blank);
  const double total = total_from_alpha(alpha, T, ext.size());
  const std::size_t ia = log_probs.id;
  const Var ins[] = {log_probs};
  return log_probs.graph->record(
      Tensor::scalar(-total), ins, [ia, ext, blank, total, alpha = std::move(alpha)](Graph& g, std::size_t self) {
        const double gl = g.grad(self)[0];
        const Tensor& lp = g.node_value(ia);
        const auto beta = backward_table(lp, ext, blank);
        Tensor& gx = g.grad(ia);
        const std::size_t T = lp.rows(), S = ext.size();
        // d(-log p)/d lp[t][k] = -sum_{s: ext[s] = k} alpha_t(s) beta_t(s) / (y_t(k) p)
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t s = 0; s < S; ++s) {
            const double ab = alpha[t * S + s] + beta[t * S + s];
            if (ab == kNegInf) continue;
            gx.at(t, ext[s]) -= gl * std::exp(ab - lp.at(t, ext[s]) - total);
          }
        }
      });
}

CtcPrefixScorer::CtcPrefixScorer(const Tensor& log_probs, TokenId blank)
    : log_probs_(log_probs), blank_(blank), frames_(log_probs.rows()) {
  check_labels(log_probs_, {}, blank_);
}

CtcPrefixScorer::State CtcPrefixScorer::initial() const {
  State s;
  s.r_nonblank.assign(frames_, kNegInf);
  s.r_blank.resize(frames_);
  double acc = 0.0;
  for (std::size_t t = 0; t < frames_; ++t) {
    acc += log_probs_.at(t, blank_);
    s.r_blank[t] = acc;
  }
  s.score = 0.0;
  return s;
}

CtcPrefixScorer::State CtcPrefixScorer::extend(const State& state, TokenId token) const {
  if (token == blank_ || token >= log_probs_.cols()) throw Error("ctc prefix: invalid token " + std::to_string(token));
  State next;
  next.prefix = state.prefix;
  next.prefix.push_back(token);
  next.r_nonblank.assign(frames_, kNegInf);
  next.r_blank.assign(frames_, kNegInf);
  if (frames_ == 0) {
    next.score = kNegInf;
    return next;
  }
  const bool repeat = !state.prefix.empty() && state.prefix.back() == token;
  next.r_nonblank[0] = state.prefix.empty() ? log_probs_.at(0, token) : kNegInf;
  double psi = next.r_nonblank[0];
  for (std::size_t t = 1; t < frames_; ++t) {
    const double phi = repeat ? state.r_blank[t - 1] : log_add(state.r_blank[t - 1], state.r_nonblank[t - 1]);
    const double y_c = log_probs_.at(t, token);
    const double stay_or_enter = log_add(next.r_nonblank[t - 1], phi);
    next.r_nonblank[t] = stay_or_enter == kNegInf ? kNegInf : stay_or_enter + y_c;
    const double prev = log_add(next.r_blank[t - 1], next.r_nonblank[t - 1]);
    next.r_blank[t] = prev == kNegInf ? kNegInf : prev + log_probs_.at(t, blank_);
    if (phi != kNegInf) psi = log_add(psi, phi + y_c);
  }
  next.score = psi;
  return next;
}

double CtcPrefixScorer::full_score(const State& state) const {
  if (frames_ == 0) return state.prefix.empty() ? 0.0 : kNegInf;
  return log_add(state.r_nonblank[frames_ - 1], state.r_blank[frames_ - 1]);
}

double ctc_prefix_score(const Tensor& log_probs, const std::vector<TokenId>& prefix, TokenId blank) {
  CtcPrefixScorer scorer(log_probs, blank);
  auto s = scorer.initial();
  for (TokenId tok : prefix) s = scorer.extend(s, tok);
  return s.score;
}

double ctc_full_score(const Tensor& log_probs, const std::vector<TokenId>& sequence, TokenId blank) {
  CtcPrefixScorer scorer(log_probs, blank);
  auto s = scorer.initial();
  for (TokenId tok : sequence) s = scorer.extend(s, tok);
  return scorer.full_score(s);
}

}  // namespace mpc
