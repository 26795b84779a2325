#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "twgtm/metrics.hpp"

using namespace twgtm;
namespace fs = std::filesystem;

namespace {

// Window-by-window SSIM with explicitly centred moments.
double naive_ssim(const torch::Tensor& a, const torch::Tensor& b) {
  std::vector<double> g(11);
  double gs = 0.0;
  for (int i = 0; i < 11; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-((i - 5.0) * (i - 5.0)) / (2 * 1.5 * 1.5));
    gs += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= gs;
  auto x = a.to(torch::kFloat64).contiguous();
  auto y = b.to(torch::kFloat64).contiguous();
  auto xa = x.accessor<double, 3>();
  auto ya = y.accessor<double, 3>();
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0.0;
  int64_t count = 0;
  for (int64_t c = 0; c < x.size(0); ++c) {
    for (int64_t r = 0; r + 11 <= x.size(1); ++r) {
      for (int64_t q = 0; q + 11 <= x.size(2); ++q) {
        double mx = 0, my = 0;
        for (int i = 0; i < 11; ++i) {
          for (int j = 0; j < 11; ++j) {
            const double w = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
            mx += w * xa[c][r + i][q + j];
            my += w * ya[c][r + i][q + j];
          }
        }
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < 11; ++i) {
          for (int j = 0; j < 11; ++j) {
            const double w = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
            const double dx = xa[c][r + i][q + j] - mx;
            const double dy = ya[c][r + i][q + j] - my;
            vx += w * dx * dx;
            vy += w * dy * dy;
            cov += w * dx * dy;
          }
        }
        sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return sum / static_cast<double>(count);
}

}  // namespace

TEST(Metrics, SsimMatchesNaiveOracle) {
  torch::manual_seed(0);
  for (int trial = 0; trial < 3; ++trial) {
    auto a = torch::rand({3, 16, 14});
    auto b = (a + 0.2 * torch::randn({3, 16, 14})).clamp(0, 1);
    EXPECT_NEAR(ssim(a, b).item<double>(), naive_ssim(a, b), 1e-9);
  }
}

TEST(Metrics, SsimBasicProperties) {
  torch::manual_seed(1);
  auto a = torch::rand({2, 3, 20, 20});
  auto b = torch::rand({2, 3, 20, 20});
  auto self = ssim(a, a);
  EXPECT_EQ(self.sizes(), (std::vector<int64_t>{2}));
  EXPECT_LE((self - 1).abs().max().item<double>(), 1e-12);
  EXPECT_LE((ssim(a, b) - ssim(b, a)).abs().max().item<double>(), 1e-12);
  EXPECT_LT(ssim(a, b).max().item<double>(), 0.5);
  EXPECT_GE(ssim(a, b).min().item<double>(), -1.0);
  // A checkerboard against its inverse is anti-correlated everywhere.
  auto idx = torch::arange(16);
  auto board = ((idx.unsqueeze(0) + idx.unsqueeze(1)) % 2).to(torch::kFloat32).unsqueeze(0);
  EXPECT_LT(ssim(board, 1 - board).item<double>(), 0.0);
  EXPECT_THROW(ssim(torch::rand({3, 8, 8}), torch::rand({3, 8, 8})), std::invalid_argument);
  EXPECT_THROW(ssim(torch::rand({3, 16, 16}), torch::rand({3, 16, 17})), std::invalid_argument);
}

TEST(Metrics, MsSsim) {
  torch::manual_seed(2);
  auto a = torch::rand({3, 64, 48});
  auto b = (a + 0.1 * torch::randn({3, 64, 48})).clamp(0, 1);
  EXPECT_NEAR(ms_ssim(a, b, 1).item<double>(), ssim(a, b).item<double>(), 1e-12);
  EXPECT_NEAR(ms_ssim(a, a).item<double>(), 1.0, 1e-12);
  const double v = ms_ssim(a, b).item<double>();
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 1.0);
  EXPECT_THROW(ms_ssim(a, b, 0), std::invalid_argument);
  EXPECT_THROW(ms_ssim(a, b, 6), std::invalid_argument);
}

TEST(Metrics, Psnr) {
  auto a = torch::zeros({1, 4, 4});
  auto b = torch::full({1, 4, 4}, 0.1);
  EXPECT_NEAR(psnr(a, b).item<double>(), 20.0, 1e-5);
  EXPECT_TRUE(std::isinf(psnr(a, a).item<double>()));
}

TEST(Metrics, MaskOverlapCases) {
  auto a = torch::zeros({1, 4, 4});
  a.narrow(1, 0, 2).fill_(1);
  auto same = mask_overlap(a, a);
  EXPECT_DOUBLE_EQ(same.iou, 1.0);
  EXPECT_DOUBLE_EQ(same.dice, 1.0);
  auto disjoint = mask_overlap(a, 1 - a);
  EXPECT_DOUBLE_EQ(disjoint.iou, 0.0);
  EXPECT_DOUBLE_EQ(disjoint.dice, 0.0);
  auto half = torch::zeros({1, 4, 4});
  half.narrow(1, 0, 1).fill_(1);  // contained, half the size
  auto h = mask_overlap(half, a);
  EXPECT_DOUBLE_EQ(h.iou, 0.5);
  EXPECT_DOUBLE_EQ(h.dice, 2.0 / 3.0);
  auto empty = torch::zeros({1, 4, 4});
  EXPECT_DOUBLE_EQ(mask_overlap(empty, empty).iou, 1.0);
  // Soft predictions are thresholded at 0.5.
  EXPECT_DOUBLE_EQ(mask_overlap(a * 0.6, a).iou, 1.0);
  EXPECT_DOUBLE_EQ(mask_overlap(a * 0.4, a).iou, 0.0);
}

TEST(Metrics, EvaluateAggregatesRows) {
  torch::manual_seed(3);
  TwgtmModel model(twgtm::testing::tiny_config());
  model->set_stage(Stage::kStage2);
  auto samples = twgtm::testing::tiny_samples(3);
  EvalOptions opts;
  opts.steps = 3;
  opts.batch_size = 2;
  auto report = evaluate(model, samples, {"a", "b", "c"}, opts);
  ASSERT_EQ(report.rows.size(), 3u);
  EXPECT_EQ(report.rows[2].id, "c");
  double mean = 0.0, iou = 0.0;
  for (const auto& r : report.rows) {
    mean += r.ssim / 3.0;
    ASSERT_TRUE(r.mask_iou.has_value());
    iou += *r.mask_iou / 3.0;
  }
  EXPECT_NEAR(report.mean_ssim, mean, 1e-9);
  ASSERT_TRUE(report.mean_mask_iou.has_value());
  EXPECT_NEAR(*report.mean_mask_iou, iou, 1e-9);

  opts.task = Task::kVton;
  opts.max_samples = 2;
  auto vton = evaluate(model, samples, {}, opts);
  EXPECT_EQ(vton.rows.size(), 2u);
  EXPECT_FALSE(vton.mean_mask_iou.has_value());

  auto dir = fs::temp_directory_path() / "twgtm_test_eval";
  fs::remove_all(dir);
  write_report(report, dir);
  EXPECT_TRUE(fs::exists(dir / "eval_vtoff.csv"));
  EXPECT_TRUE(fs::exists(dir / "eval_vtoff.json"));
  EXPECT_EQ(report.summary_json()["samples"], 3);
  fs::remove_all(dir);
}
