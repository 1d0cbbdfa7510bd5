#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mpc/schedule.hpp"

namespace mpc {
namespace {

TEST(LrSchedule, PublishedFormulaValues) {
  const ScheduleConfig cfg;  // k 0.5, d_model 256, warmup 8000
  EXPECT_NEAR(lr_at_step(8000, cfg), 0.5 * 16.0 / std::sqrt(8000.0), 1e-15);
  EXPECT_NEAR(lr_at_step(8000, cfg) / 0.0894427191, 1.0, 1e-9);
  EXPECT_NEAR(lr_at_step(1, cfg), 0.5 * 16.0 * std::pow(8000.0, -1.5), 1e-18);
  EXPECT_NEAR(lr_at_step(1, cfg) / 1.1180339887e-5, 1.0, 1e-9);
  EXPECT_DOUBLE_EQ(lr_at_step(32000, cfg), lr_at_step(8000, cfg) / 2.0);
  EXPECT_THROW(lr_at_step(0, cfg), Error);
}

TEST(LrSchedule, ContinuousAtWarmupAndCanonicalFlag) {
  ScheduleConfig cfg;
  const double peak = 0.5 * 16.0 * std::pow(8000.0, -0.5);
  const double warm = 0.5 * 16.0 * 8000.0 * std::pow(8000.0, -1.5);
  EXPECT_NEAR(peak, warm, 1e-15);
  EXPECT_NEAR(lr_at_step(7999, cfg), peak * 7999.0 / 8000.0, 1e-15);
  EXPECT_NEAR(lr_at_step(8001, cfg), peak * std::sqrt(8000.0 / 8001.0), 1e-15);
  cfg.canonical_noam = true;
  EXPECT_NEAR(lr_at_step(8000, cfg), 0.5 / 16.0 / std::sqrt(8000.0), 1e-15);
}

TEST(LrSchedule, Validation) {
  ScheduleConfig cfg;
  cfg.k = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.warmup_n = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Adam, ZeroGradientIsIdentity) {
  ParamStore p{{"w", Tensor::vector({1.5, -2.0})}};
  AdamState s;
  s.m["w"] = Tensor::vector({0.0, 0.0});
  const ParamStore before = p;
  for (int i = 0; i < 5; ++i) adam_step(p, {{"w", Tensor::vector({0.0, 0.0})}}, s, 0.1, 0.0);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepIsSignStepOfSizeLr) {
  for (double g : {3.0, -0.002, 250.0}) {
    ParamStore p{{"w", Tensor::scalar(1.0)}};
    AdamState s;
    AdamConfig cfg;
    cfg.clip_norm = 0.0;
    adam_step(p, {{"w", Tensor::scalar(g)}}, s, 0.01, 0.0, cfg);
    // m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
    const double expected = 1.0 - 0.01 * g / (std::abs(g) + 1e-9);
    EXPECT_NEAR(p.at("w").item(), expected, 1e-15);
    EXPECT_EQ(s.step, 1u);
  }
}

TEST(Adam, SecondStepMatchesHandComputation) {
  ParamStore p{{"w", Tensor::scalar(0.0)}};
  AdamState s;
  adam_step(p, {{"w", Tensor::scalar(1.0)}}, s, 0.1, 0.0);
  adam_step(p, {{"w", Tensor::scalar(-0.5)}}, s, 0.1, 0.0);
  const double m = 0.9 * 0.1 * 1.0 + 0.1 * -0.5;
  const double v = 0.98 * 0.02 * 1.0 + 0.02 * 0.25;
  const double m_hat = m / (1 - 0.81), v_hat = v / (1 - 0.98 * 0.98);
  const double expected = -0.1 * (1.0 / (1.0 + 1e-9)) - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-9);
  EXPECT_NEAR(p.at("w").item(), expected, 1e-15);
}

TEST(Adam, ClipsByGlobalNorm) {
  ParamStore p{{"a", Tensor::scalar(0.0)}, {"b", Tensor::scalar(0.0)}};
  AdamState s;
  const AdamReport r = adam_step(p, {{"a", Tensor::scalar(30.0)}, {"b", Tensor::scalar(40.0)}}, s, 0.1, 0.0);
  EXPECT_TRUE(r.applied);
  EXPECT_TRUE(r.clipped);
  EXPECT_DOUBLE_EQ(r.grad_norm, 50.0);
  // Clipped gradient (3, 4); first moment stores 0.1 * clipped.
  EXPECT_NEAR(s.m.at("a").item(), 0.3, 1e-15);
  EXPECT_NEAR(s.m.at("b").item(), 0.4, 1e-15);
  const AdamReport small = adam_step(p, {{"a", Tensor::scalar(0.3)}, {"b", Tensor::scalar(0.4)}}, s, 0.1, 0.0);
  EXPECT_FALSE(small.clipped);
}

TEST(Adam, NonFiniteGradientSkipsBatch) {
  ParamStore p{{"w", Tensor::vector({1.0, 2.0})}};
  AdamState s;
  adam_step(p, {{"w", Tensor::vector({0.1, 0.1})}}, s, 0.1, 0.0);
  const ParamStore params_before = p;
  const AdamState state_before = s;
  const AdamReport r =
      adam_step(p, {{"w", Tensor::vector({std::numeric_limits<double>::quiet_NaN(), 0.0})}}, s, 0.1, 0.0);
  EXPECT_FALSE(r.applied);
  EXPECT_EQ(p, params_before);
  EXPECT_EQ(s.step, state_before.step);
  EXPECT_EQ(s.m, state_before.m);
  EXPECT_EQ(s.v, state_before.v);
}

TEST(Adam, DecayShrinksMonotonically) {
  ParamStore p{{"w", Tensor::vector({2.0, -3.0})}};
  AdamState s;
  double prev0 = 2.0, prev1 = 3.0;
  for (int i = 0; i < 50; ++i) {
    adam_step(p, {{"w", Tensor::vector({0.0, 0.0})}}, s, 0.01, 0.1);
    const double a = std::abs(p.at("w")[0]), b = std::abs(p.at("w")[1]);
    EXPECT_LT(a, prev0);
    EXPECT_LT(b, prev1);
    prev0 = a;
    prev1 = b;
  }
}

TEST(Adam, UnknownGradientRejected) {
  ParamStore p{{"w", Tensor::scalar(1.0)}};
  AdamState s;
  EXPECT_THROW(adam_step(p, {{"other", Tensor::scalar(1.0)}}, s, 0.1, 0.0), Error);
}

TEST(Plateau, Examples) {
  const ScheduleConfig cfg;
  PlateauState s;
  for (double loss : {5.0, 4.0, 3.0, 2.0, 1.0, 0.5, 0.4, 0.3}) EXPECT_EQ(plateau_update(s, loss, cfg), PlateauAction::NoAction);

  PlateauState t;
  const double trace[] = {1.0, 1.1, 1.1, 1.1, 1.1, 1.1};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(plateau_update(t, trace[i], cfg), PlateauAction::NoAction) << i;
  EXPECT_EQ(plateau_update(t, trace[5], cfg), PlateauAction::DivideLr);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(plateau_update(t, 2.0, cfg), PlateauAction::NoAction);
  EXPECT_EQ(t.applications, 1u);
}

TEST(Plateau, EqualLossIsNotImprovement) {
  const ScheduleConfig cfg;
  PlateauState s;
  plateau_update(s, 1.0, cfg);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(plateau_update(s, 1.0, cfg), PlateauAction::NoAction);
  EXPECT_EQ(plateau_update(s, 1.0, cfg), PlateauAction::DivideLr);
}

TEST(Plateau, ImprovementResetsCount) {
  const ScheduleConfig cfg;
  PlateauState s;
  for (double loss : {1.0, 2.0, 2.0, 2.0, 2.0, 0.9, 2.0, 2.0, 2.0, 2.0}) {
    EXPECT_EQ(plateau_update(s, loss, cfg), PlateauAction::NoAction);
  }
  EXPECT_EQ(plateau_update(s, 2.0, cfg), PlateauAction::DivideLr);
}

TEST(ScheduledSampling, Rates) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(scheduled_sample(5, 9, 0.0, rng), 5u);
    EXPECT_EQ(scheduled_sample(5, 9, 1.0, rng), 9u);
  }
  std::size_t model = 0;
  for (int i = 0; i < 100000; ++i) model += scheduled_sample(5, 9, 0.1, rng) == 9;
  EXPECT_GE(model, 9500u);
  EXPECT_LE(model, 10500u);
  EXPECT_THROW(scheduled_sample(1, 2, 1.5, rng), Error);
}

}  // namespace
}  // namespace mpc
