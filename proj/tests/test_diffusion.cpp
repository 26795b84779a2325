#include <gtest/gtest.h>

#include <cmath>

#include "twgtm/diffusion.hpp"

using namespace twgtm;

TEST(Schedule, ConstantBetaMatchesHandValues) {
  const auto s = make_schedule(3, 0.1, 0.1);
  ASSERT_EQ(s.alphas_cum.size(), 4u);
  EXPECT_DOUBLE_EQ(s.alpha(0), 1.0);
  EXPECT_NEAR(s.alpha(1), 0.9, 1e-12);
  EXPECT_NEAR(s.alpha(2), 0.81, 1e-12);
  EXPECT_NEAR(s.alpha(3), 0.729, 1e-12);
}

TEST(Schedule, RecurrenceHoldsForLinearSchedule) {
  const auto s = make_schedule(1000, 1e-4, 0.02);
  EXPECT_DOUBLE_EQ(s.betas.front(), 1e-4);
  EXPECT_NEAR(s.betas.back(), 0.02, 1e-15);
  for (int64_t t = 1; t <= 1000; ++t) {
    EXPECT_EQ(s.alpha(t), s.alpha(t - 1) * (1.0 - s.betas[static_cast<std::size_t>(t - 1)]));
    EXPECT_LT(s.alpha(t), s.alpha(t - 1));
  }
  EXPECT_GT(s.alpha(1000), 0.0);
}

TEST(Schedule, RejectsBadBounds) {
  EXPECT_THROW(make_schedule(0), std::invalid_argument);
  EXPECT_THROW(make_schedule(10, 0.0, 0.02), std::invalid_argument);
  EXPECT_THROW(make_schedule(10, 0.03, 0.02), std::invalid_argument);
  EXPECT_THROW(make_schedule(10, 0.1, 1.0), std::invalid_argument);
}

TEST(ForwardNoise, ClosedForm) {
  const auto s = make_schedule(3, 0.1, 0.1);
  auto z0 = torch::randn({2, 3, 4, 4}, torch::kFloat64);
  auto eps = torch::randn({2, 3, 4, 4}, torch::kFloat64);
  auto zt = forward_noise(z0, torch::tensor({1, 3}), eps, s);
  auto expect0 = std::sqrt(0.9) * z0[0] + std::sqrt(0.1) * eps[0];
  auto expect1 = std::sqrt(0.729) * z0[1] + std::sqrt(1 - 0.729) * eps[1];
  EXPECT_LT((zt[0] - expect0).abs().max().item<double>(), 1e-12);
  EXPECT_LT((zt[1] - expect1).abs().max().item<double>(), 1e-12);
  // t = 0 is the clean latent.
  EXPECT_TRUE(torch::equal(forward_noise(z0, 0, eps, s), z0));
}

TEST(ForwardNoise, MonteCarloVarianceMatchesSchedule) {
  const auto s = make_schedule(1000, 1e-4, 0.02);
  torch::manual_seed(0);
  auto eps = torch::randn({100000}, torch::kFloat64);
  for (int64_t t : {10, 250, 700}) {
    auto zt = forward_noise(torch::zeros({100000}, torch::kFloat64), t, eps, s);
    const double var = zt.var().item<double>();
    EXPECT_NEAR(var / (1.0 - s.alpha(t)), 1.0, 0.02) << "t=" << t;
  }
}

TEST(ForwardNoise, Rejections) {
  const auto s = make_schedule(10);
  auto z = torch::zeros({2, 3});
  EXPECT_THROW(forward_noise(z, 11, z, s), std::invalid_argument);
  EXPECT_THROW(forward_noise(z, -1, z, s), std::invalid_argument);
  EXPECT_THROW(forward_noise(z, 1, torch::zeros({2, 4}), s), std::invalid_argument);
}

TEST(DiffusionLoss, IsMeanSquaredError) {
  auto a = torch::tensor({1.0, 2.0, 3.0, 4.0});
  auto b = torch::tensor({1.0, 0.0, 3.0, 6.0});
  EXPECT_DOUBLE_EQ(diffusion_loss(a, b).item<double>(), 2.0);
  EXPECT_THROW(diffusion_loss(a, torch::zeros({3})), std::invalid_argument);
}

TEST(Ddim, TimestepsDescendFromT) {
  const auto ts = ddim_timesteps(1000, 30);
  ASSERT_EQ(ts.size(), 30u);
  EXPECT_EQ(ts.front(), 1000);
  EXPECT_EQ(ts.back(), 1);
  for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
  EXPECT_THROW(ddim_timesteps(10, 0), std::invalid_argument);
  EXPECT_THROW(ddim_timesteps(10, 11), std::invalid_argument);
}

TEST(Ddim, OraclePredictorRecoversCleanLatent) {
  // With the exact noise predictor for a known x0 the deterministic sampler
  // lands on x0 regardless of the starting noise.
  const auto s = make_schedule(1000);
  auto x0 = torch::rand({2, 3, 4, 4}, torch::kFloat64) * 1.6 - 0.8;
  auto guidance = torch::zeros({2, 3, 4, 4}, torch::kFloat64);
  auto mask = torch::zeros({2, 1, 4, 4}, torch::kFloat64);
  NoisePredictor oracle = [&](const torch::Tensor& input, const torch::Tensor& t) {
    EXPECT_EQ(input.size(1), 7);
    const double a = s.alpha(t[0].item<int64_t>());
    auto z = input.narrow(1, 0, 3);
    return (z - std::sqrt(a) * x0) / std::sqrt(1.0 - a);
  };
  SamplerOptions opts;
  opts.steps = 30;
  auto out = ddim_sample(oracle, guidance, mask, s, opts);
  EXPECT_LT((out - x0).abs().max().item<double>(), 1e-9);
}

TEST(Ddim, DeterministicUnderSeed) {
  const auto s = make_schedule(100);
  auto guidance = torch::randn({1, 3, 4, 4});
  auto mask = torch::ones({1, 1, 4, 4});
  NoisePredictor pred = [](const torch::Tensor& input, const torch::Tensor&) { return 0.1 * input.narrow(1, 0, 3); };
  SamplerOptions opts;
  opts.steps = 10;
  opts.seed = 5;
  auto a = ddim_sample(pred, guidance, mask, s, opts);
  auto b = ddim_sample(pred, guidance, mask, s, opts);
  EXPECT_TRUE(torch::equal(a, b));
  opts.seed = 6;
  EXPECT_FALSE(torch::equal(a, ddim_sample(pred, guidance, mask, s, opts)));
}
