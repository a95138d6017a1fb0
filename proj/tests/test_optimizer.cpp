#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "trialign/errors.hpp"
#include "trialign/optimizer.hpp"

using namespace trialign;

TEST(Schedule, WarmupStepsAreTwoPercentRounded) {
  EXPECT_EQ(Schedule::make(1e-4, 1000).warmup_steps, 20);
  EXPECT_EQ(Schedule::make(1e-4, 140).warmup_steps, 3);  // 2.8
  EXPECT_EQ(Schedule::make(1e-4, 10).warmup_steps, 0);   // 0.2
  EXPECT_THROW(Schedule::make(1e-4, 10, 1.5), ConfigError);
}

TEST(Schedule, Endpoints) {
  const auto s = Schedule::make(1e-4, 1000);
  EXPECT_EQ(lr_at(s, 0), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(s, s.warmup_steps), 1e-4);
  EXPECT_NEAR(lr_at(s, 1000), 0.0, 1e-20);
  EXPECT_DOUBLE_EQ(lr_at(s, 10), 0.5e-4);
  EXPECT_THROW(lr_at(s, -1), ConfigError);
  EXPECT_THROW(lr_at(s, 1001), ConfigError);
}

TEST(Schedule, CosineMidpointAndFloor) {
  const auto s = Schedule::make(2.0, 120, 0.0);
  EXPECT_DOUBLE_EQ(lr_at(s, 60), 1.0);
  EXPECT_NEAR(lr_at(s, 40), 2.0 * 0.5 * (1.0 + std::cos(std::numbers::pi / 3.0)), 1e-15);
  const auto floored = Schedule::make(2.0, 120, 0.0, 0.5);
  EXPECT_DOUBLE_EQ(lr_at(floored, 120), 0.5);
}

TEST(Schedule, ContinuousAtWarmupBoundary) {
  const auto s = Schedule::make(1e-3, 5000);
  const double before = lr_at(s, s.warmup_steps - 1);
  const double at = lr_at(s, s.warmup_steps);
  const double after = lr_at(s, s.warmup_steps + 1);
  EXPECT_NEAR(at - before, 1e-3 / static_cast<double>(s.warmup_steps), 1e-15);
  EXPECT_LT(at - after, 1e-9);
  for (std::int64_t k = 0; k < s.warmup_steps; ++k) EXPECT_LT(lr_at(s, k), lr_at(s, k + 1));
  for (std::int64_t k = s.warmup_steps; k < s.total_steps; ++k) EXPECT_GE(lr_at(s, k), lr_at(s, k + 1));
}

TEST(Clip, ScalesDownToMaxNorm) {
  std::vector<float> g{3.0f, 4.0f};
  std::vector<std::span<float>> views{g};
  EXPECT_DOUBLE_EQ(clip_global_norm(views, 1.0), 5.0);
  EXPECT_FLOAT_EQ(g[0], 0.6f);
  EXPECT_FLOAT_EQ(g[1], 0.8f);
}

TEST(Clip, LeavesSmallGradientsUntouched) {
  std::vector<float> g{0.3f, 0.4f};
  std::vector<std::span<float>> views{g};
  EXPECT_NEAR(clip_global_norm(views, 1.0), 0.5, 1e-7);
  EXPECT_EQ(g[0], 0.3f);
  EXPECT_EQ(g[1], 0.4f);
}

TEST(Clip, GlobalNormAcrossTensorsPreservesDirection) {
  std::vector<float> a{1.0f, -2.0f, 2.0f}, b{4.0f, 0.0f};
  const std::vector<float> a0 = a, b0 = b;
  std::vector<std::span<float>> views{a, b};
  EXPECT_DOUBLE_EQ(clip_global_norm(views, 1.0), 5.0);
  double sq = 0.0;
  for (float v : a) sq += double(v) * v;
  for (float v : b) sq += double(v) * v;
  EXPECT_LE(std::sqrt(sq), 1.0 + 1e-7);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_FLOAT_EQ(a[i], a0[i] / 5.0f);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_FLOAT_EQ(b[i], b0[i] / 5.0f);
}

TEST(Clip, NonFiniteIsNumericsError) {
  std::vector<float> g{1.0f, std::nanf("")};
  std::vector<std::span<float>> views{g};
  EXPECT_THROW(clip_global_norm(views, 1.0), NumericsError);
}

TEST(AdamW, SingleScalarStep) {
  std::vector<float> p{1.0f};
  const std::vector<float> g{1.0f};
  OptimState state;
  state.config.weight_decay = 1e-5;
  TensorSlot slot{p, g, true};
  adamw_step(std::span<const TensorSlot>(&slot, 1), state, 0.1);
  // m_hat = 1, v_hat = 1: p = 1 - 0.1*1e-5*1 - 0.1 * 1 / (1 + 1e-8)
  const double expected = 1.0 - 0.1 * 1e-5 - 0.1 / (1.0 + 1e-8);
  EXPECT_NEAR(p[0], expected, 1e-7);
  EXPECT_NEAR(p[0], 0.9, 1e-5);
  EXPECT_EQ(state.step, 1);
}

TEST(AdamW, ZeroGradientZeroDecayIsNoOp) {
  std::vector<float> p{0.5f, -2.0f};
  const std::vector<float> g{0.0f, 0.0f};
  OptimState state;
  state.config.weight_decay = 0.0;
  TensorSlot slot{p, g, true};
  for (int i = 0; i < 5; ++i) adamw_step(std::span<const TensorSlot>(&slot, 1), state, 0.1);
  EXPECT_EQ(p[0], 0.5f);
  EXPECT_EQ(p[1], -2.0f);
}

TEST(AdamW, DecoupledDecayShrinksGeometrically) {
  std::vector<float> p{1.0f};
  const std::vector<float> g{0.0f};
  OptimState state;
  state.config.weight_decay = 0.1;
  TensorSlot slot{p, g, true};
  double expected = 1.0;
  for (int i = 0; i < 10; ++i) {
    adamw_step(std::span<const TensorSlot>(&slot, 1), state, 0.5);
    expected *= 1.0 - 0.5 * 0.1;
  }
  EXPECT_NEAR(p[0], expected, 1e-6);

  std::vector<float> q{1.0f};
  TensorSlot no_decay{q, g, false};
  OptimState other;
  other.config.weight_decay = 0.1;
  adamw_step(std::span<const TensorSlot>(&no_decay, 1), other, 0.5);
  EXPECT_EQ(q[0], 1.0f);
}

TEST(AdamW, MatchesHandRecurrenceOverSeveralSteps) {
  const double lr = 0.01, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double grads[] = {0.5, -1.5, 2.0, 0.25};
  std::vector<float> p{0.75f};
  std::vector<float> g{0.0f};
  OptimState state;
  state.config.weight_decay = wd;
  double ref_p = 0.75, m = 0.0, v = 0.0;
  for (int t = 1; t <= 4; ++t) {
    g[0] = static_cast<float>(grads[t - 1]);
    TensorSlot slot{p, g, true};
    adamw_step(std::span<const TensorSlot>(&slot, 1), state, lr);
    m = b1 * m + (1 - b1) * grads[t - 1];
    v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
    ref_p = ref_p * (1 - lr * wd) - lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  EXPECT_NEAR(p[0], ref_p, 1e-6);
}

TEST(AdamW, ShapeMismatchIsShapeError) {
  std::vector<float> p{1.0f, 2.0f};
  const std::vector<float> g{1.0f};
  OptimState state;
  TensorSlot slot{p, g, true};
  EXPECT_THROW(adamw_step(std::span<const TensorSlot>(&slot, 1), state, 0.1), ShapeError);

  const std::vector<float> g2{1.0f, 1.0f};
  TensorSlot ok{p, g2, true};
  OptimState fresh;
  adamw_step(std::span<const TensorSlot>(&ok, 1), fresh, 0.1);
  TensorSlot slots[2] = {ok, ok};
  EXPECT_THROW(adamw_step(slots, fresh, 0.1), ShapeError);
}

TEST(AdamW, DeterministicGivenInputs) {
  auto run = [] {
    std::vector<float> p{0.1f, 0.2f, 0.3f};
    const std::vector<float> g{0.3f, -0.1f, 0.7f};
    OptimState state;
    TensorSlot slot{p, g, true};
    for (int i = 0; i < 3; ++i) adamw_step(std::span<const TensorSlot>(&slot, 1), state, 0.05);
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Accumulate, MeanOfMicroBatches) {
  const std::vector<std::vector<float>> one{{1.0f, -2.0f}};
  EXPECT_EQ(accumulate(one), one[0]);
  const std::vector<std::vector<float>> copies(4, {0.25f, 3.0f});
  EXPECT_EQ(accumulate(copies), copies[0]);
  const std::vector<std::vector<float>> mixed{{1.0f, 0.0f}, {3.0f, -4.0f}};
  EXPECT_EQ(accumulate(mixed), (std::vector<float>{2.0f, -2.0f}));
  EXPECT_THROW(accumulate(std::vector<std::vector<float>>{}), ConfigError);
  EXPECT_THROW(accumulate(std::vector<std::vector<float>>{{1.0f}, {1.0f, 2.0f}}), ShapeError);
}
