#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "mpc/ctc.hpp"
#include "test_util.hpp"

namespace mpc {
namespace {

Tensor random_log_probs(std::size_t t, std::size_t v, Rng& rng) {
  Tensor lp(Shape{t, v});
  for (std::size_t i = 0; i < t; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += (lp.at(i, j) = rng.uniform(0.05, 1.0));
    for (std::size_t j = 0; j < v; ++j) lp.at(i, j) = std::log(lp.at(i, j) / z);
  }
  return lp;
}

std::vector<TokenId> collapse(const std::vector<TokenId>& path) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (path[i] != 0 && (i == 0 || path[i] != path[i - 1])) out.push_back(path[i]);
  }
  return out;
}

// Sums every length-T path: total mass collapsing to `labels`, and mass whose
// collapse starts with `labels`.
struct Enumerated {
  double full = 0.0;
  double prefix = 0.0;
};

Enumerated enumerate(const Tensor& lp, const std::vector<TokenId>& labels) {
  const std::size_t t = lp.rows(), v = lp.cols();
  Enumerated e;
  std::vector<TokenId> path(t, 0);
  std::function<void(std::size_t, double)> rec = [&](std::size_t i, double logp) {
    if (i == t) {
      const auto c = collapse(path);
      const double p = std::exp(logp);
      if (c == labels) e.full += p;
      if (c.size() >= labels.size() && std::equal(labels.begin(), labels.end(), c.begin())) e.prefix += p;
      return;
    }
    for (TokenId k = 0; k < v; ++k) {
      path[i] = k;
      rec(i + 1, logp + lp.at(i, k));
    }
  };
  rec(0, 0.0);
  return e;
}

Tensor uniform_log_probs(std::size_t t, std::size_t v) { return Tensor(Shape{t, v}, -std::log(static_cast<double>(v))); }

TEST(Ctc, HandExamples) {
  Graph g;
  Tensor one(Shape{1, 2}, std::log(0.5));
  EXPECT_NEAR(ctc_loss(g.constant(one), {1}).value().item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(ctc_loss(g.constant(uniform_log_probs(2, 3)), {1}).value().item(), std::log(3.0), 1e-12);
  EXPECT_NEAR(ctc_loss(g.constant(uniform_log_probs(2, 3)), {}).value().item(), std::log(9.0), 1e-12);
}

TEST(Ctc, MinFramesAndInfeasible) {
  EXPECT_EQ(ctc_min_frames({}), 0u);
  EXPECT_EQ(ctc_min_frames({1, 2, 3}), 3u);
  EXPECT_EQ(ctc_min_frames({1, 1, 2, 2}), 6u);
  Graph g;
  const Var lp = g.constant(uniform_log_probs(2, 3));
  const Var loss = ctc_loss(lp, {1, 1});
  EXPECT_TRUE(std::isinf(loss.value().item()));
  EXPECT_EQ(ctc_log_likelihood(lp.value(), {1, 1}), -std::numeric_limits<double>::infinity());
}

TEST(Ctc, MatchesPathEnumeration) {
  Rng rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t t = 1 + rng.uniform_int(5), v = 2 + rng.uniform_int(3);
    const Tensor lp = random_log_probs(t, v, rng);
    std::vector<TokenId> labels(rng.uniform_int(4));
    for (auto& l : labels) l = 1 + rng.uniform_int(v - 1);
    const Enumerated e = enumerate(lp, labels);
    const double ll = ctc_log_likelihood(lp, labels);
    if (e.full == 0.0) {
      EXPECT_TRUE(std::isinf(ll));
    } else {
      EXPECT_NEAR(ll, std::log(e.full), 1e-10);
      Graph g;
      EXPECT_NEAR(ctc_loss(g.constant(lp), labels).value().item(), -std::log(e.full), 1e-10);
    }
    EXPECT_NEAR(std::exp(ctc_prefix_score(lp, labels)), e.prefix, 1e-10);
    EXPECT_NEAR(std::exp(ctc_full_score(lp, labels)), e.full, 1e-10);
  }
}

TEST(CtcPrefix, Examples) {
  const Tensor lp = uniform_log_probs(2, 3);
  // Paths starting with an emission of 1: "1?" (3 paths) and "01" (1 path).
  EXPECT_NEAR(ctc_prefix_score(lp, {1}), std::log(4.0 / 9.0), 1e-12);
  EXPECT_EQ(ctc_prefix_score(lp, {}), 0.0);
  Graph g;
  EXPECT_NEAR(ctc_full_score(lp, {1}), -ctc_loss(g.constant(lp), {1}).value().item(), 1e-12);
}

TEST(CtcPrefix, IncrementalMatchesWrappers) {
  Rng rng(32);
  const Tensor lp = random_log_probs(6, 4, rng);
  const CtcPrefixScorer scorer(lp);
  auto s = scorer.initial();
  std::vector<TokenId> prefix;
  for (TokenId tok : {2, 2, 3}) {
    s = scorer.extend(s, tok);
    prefix.push_back(tok);
    EXPECT_EQ(s.prefix, prefix);
    EXPECT_NEAR(s.score, ctc_prefix_score(lp, prefix), 1e-12);
    EXPECT_NEAR(scorer.full_score(s), ctc_log_likelihood(lp, prefix), 1e-12);
    EXPECT_LE(scorer.full_score(s), s.score + 1e-12);
  }
}

TEST(CtcPrefix, ExtensionsNeverIncreaseScore) {
  Rng rng(33);
  const Tensor lp = random_log_probs(5, 4, rng);
  const CtcPrefixScorer scorer(lp);
  auto s = scorer.initial();
  for (int depth = 0; depth < 4; ++depth) {
    const auto next = scorer.extend(s, 1 + rng.uniform_int(3));
    EXPECT_LE(next.score, s.score + 1e-12);
    s = next;
  }
}

TEST(LogAdd, Basics) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_NEAR(log_add(std::log(0.25), std::log(0.5)), std::log(0.75), 1e-15);
  EXPECT_EQ(log_add(-inf, 1.5), 1.5);
  EXPECT_EQ(log_add(-inf, -inf), -inf);
}

}  // namespace
}  // namespace mpc
