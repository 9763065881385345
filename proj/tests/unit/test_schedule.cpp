#include <gtest/gtest.h>

#include <cmath>

#include "draglora/rng.hpp"
#include "draglora/schedule.hpp"

using namespace draglora;

namespace {

Tensor<double> scalar(double v) { return Tensor<double>({1}, v); }

}  // namespace

TEST(Schedule, SingleStepProduct) {
  auto s = build_schedule(1, 0.5, 0.5, 1);
  ASSERT_EQ(s.alpha_bars.size(), 1u);
  EXPECT_DOUBLE_EQ(s.alpha_bars[0], 0.5);
}

TEST(Schedule, TwoStepProduct) {
  auto s = build_schedule(2, 0.1, 0.1, 1);
  EXPECT_NEAR(s.alpha_bars[0], 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bars[1], 0.81, 1e-15);
}

TEST(Schedule, StepMapIndexArithmetic) {
  auto s = default_schedule();
  EXPECT_EQ(s.step_map[34], 699);
  EXPECT_EQ(s.step_map[49], 999);
  EXPECT_EQ(s.timestep(35), 699);
  EXPECT_EQ(s.timestep(0), 0);
  for (std::size_t i = 1; i < s.step_map.size(); ++i) EXPECT_LT(s.step_map[i - 1], s.step_map[i]);
}

TEST(Schedule, Invariants) {
  auto s = default_schedule();
  for (int t = 0; t < s.train_steps; ++t) {
    EXPECT_GT(s.betas[t], 0.0);
    EXPECT_LT(s.betas[t], 1.0);
    if (t > 0) {
      EXPECT_LT(s.alpha_bars[t], s.alpha_bars[t - 1]);
      EXPECT_NEAR(s.alpha_bars[t], s.alphas[t] * s.alpha_bars[t - 1], 1e-15);
    }
  }
  EXPECT_NEAR(s.betas.front(), 1e-4, 1e-15);
  EXPECT_NEAR(s.betas.back(), 0.02, 1e-15);
}

TEST(Schedule, RejectsInvalidRanges) {
  EXPECT_THROW(build_schedule(1000, 0.0, 0.02, 50), ConfigError);
  EXPECT_THROW(build_schedule(1000, 0.03, 0.02, 50), ConfigError);
  EXPECT_THROW(build_schedule(1000, 1e-4, 1.0, 50), ConfigError);
  EXPECT_THROW(build_schedule(1000, 1e-4, 0.02, 33), ConfigError);
  EXPECT_THROW(build_schedule(0, 1e-4, 0.02, 1), ConfigError);
}

TEST(DdpmForward, Limits) {
  Tensor<double> z0({2, 2}, {1, -2, 3, 0.5});
  Tensor<double> eps({2, 2}, {0.1, 0.2, -0.3, 0.4});
  EXPECT_EQ(ddpm_forward(z0, eps, 1.0), z0);
  EXPECT_LT(max_abs_diff(ddpm_forward(z0, eps, 1e-300), eps), 1e-12);
  auto out = ddpm_forward(Tensor<double>({3}, 1.0), Tensor<double>({3}, 1.0), 0.25);
  for (double v : out.data) EXPECT_NEAR(v, 0.5 + std::sqrt(0.75), 1e-15);
  EXPECT_THROW(ddpm_forward(z0, Tensor<double>({3}), 0.5), ShapeError);
}

TEST(DdimStep, ScalarCases) {
  // z=1, eps=0, ab 0.25 -> 0.81
  auto out = ddim_transfer(scalar(1.0), scalar(0.0), 0.25, 0.81);
  EXPECT_NEAR(out[0], 1.8, 1e-12);
  // Equal coefficients -> identity.
  auto id = ddim_transfer(scalar(0.7), scalar(-1.3), 0.4, 0.4);
  EXPECT_NEAR(id[0], 0.7, 1e-15);
  // Inversion scalar: z=1, eps=1, ab 0.81 -> 0.25, by direct substitution.
  auto inv = ddim_transfer(scalar(1.0), scalar(1.0), 0.81, 0.25);
  const double expect = std::sqrt(0.25) * (1.0 - std::sqrt(0.19)) / std::sqrt(0.81) + std::sqrt(0.75);
  EXPECT_NEAR(inv[0], expect, 1e-12);
}

TEST(DdimStep, ExactEpsRecoversForwardAtPreviousStep) {
  auto s = default_schedule();
  Rng rng(3);
  auto z0 = rng.normal_tensor<double>({3, 4, 4});
  auto eps = rng.normal_tensor<double>({3, 4, 4});
  auto zt = ddpm_forward(z0, eps, s.alpha_bar_at_index(35));
  auto prev = ddim_step(zt, eps, 35, 34, s);
  EXPECT_LT(max_abs_diff(prev, ddpm_forward(z0, eps, s.alpha_bar_at_index(34))), 1e-12);
}

TEST(DdimStep, DirectionErrors) {
  auto s = default_schedule();
  Tensor<double> z({1}, 1.0);
  EXPECT_THROW(ddim_step(z, z, 10, 10, s), ConfigError);
  EXPECT_THROW(ddim_step(z, z, 10, 11, s), ConfigError);
  EXPECT_THROW(ddim_invert_step(z, z, 10, 10, s), ConfigError);
  EXPECT_THROW(ddim_invert_step(z, z, 10, 9, s), ConfigError);
  EXPECT_THROW(s.alpha_bar_at_index(51), ConfigError);
}

TEST(DdimStep, InvertThenDenoiseIsIdentityEverywhere) {
  auto s = default_schedule();
  Rng rng(11);
  for (int i = 0; i < s.inference_steps; ++i) {
    auto z = rng.normal_tensor<double>({3, 4, 4});
    auto e = rng.normal_tensor<double>({3, 4, 4});
    auto up = ddim_invert_step(z, e, i, i + 1, s);
    auto back = ddim_step(up, e, i + 1, i, s);
    EXPECT_LE(max_abs_diff(back, z), 1e-6) << "index " << i;
  }
}

TEST(DdpmForward, VariancePreservation) {
  auto s = default_schedule();
  for (int t : {0, 100, 500, 999}) {
    const double ab = s.alpha_bar_at_timestep(t);
    EXPECT_NEAR(std::pow(std::sqrt(ab), 2) + std::pow(std::sqrt(1 - ab), 2), 1.0, 1e-12);
  }
}
