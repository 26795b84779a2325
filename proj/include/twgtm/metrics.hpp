#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "twgtm/common.hpp"
#include "twgtm/datagen.hpp"
#include "twgtm/model.hpp"

namespace twgtm {

// Image metrics take C x H x W or B x C x H x W tensors with values in [0, 1].

/// Gaussian-window SSIM (11 taps, sigma 1.5, K1 0.01, K2 0.03, valid
/// convolution), averaged over channels and pixels. One value per image.
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b);

/// Multi-scale SSIM over `scales` dyadic scales with the standard first
/// weights renormalised to sum to one. With one scale it equals ssim().
torch::Tensor ms_ssim(const torch::Tensor& a, const torch::Tensor& b, int scales = 3);

/// Peak signal-to-noise ratio in dB for unit peak; +inf for identical inputs.
torch::Tensor psnr(const torch::Tensor& a, const torch::Tensor& b);

struct MaskOverlap {
  double iou = 0.0;
  double dice = 0.0;
};
/// Overlap of two binary masks after thresholding `pred` at 0.5. Two empty
/// masks score 1 on both measures.
MaskOverlap mask_overlap(const torch::Tensor& pred, const torch::Tensor& target);

/// [-1, 1] -> [0, 1].
torch::Tensor to_unit_range(const torch::Tensor& image);

struct EvalOptions {
  std::string split = "test";
  Task task = Task::kVtoff;
  int64_t steps = 30;
  std::uint64_t seed = 0;
  int64_t max_samples = 0;  // 0: all
  bool use_bbox = false;    // VTOFF: confine generation to the garment's bounding box
  int64_t batch_size = 4;
};

struct EvalRow {
  std::string id;
  Category category = Category::kUpper;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  double psnr = 0.0;
  std::optional<double> mask_iou;
  std::optional<double> mask_dice;
};

struct EvalReport {
  Task task = Task::kVtoff;
  std::vector<EvalRow> rows;
  double mean_ssim = 0.0;
  double mean_ms_ssim = 0.0;
  double mean_psnr = 0.0;
  std::optional<double> mean_mask_iou;
  std::optional<double> mean_mask_dice;

  nlohmann::json summary_json() const;
};

/// Evaluates a model on a dataset split. The VTON target is the person image;
/// the VTOFF target is the flat garment, and VTOFF also scores the predicted
/// flat mask.
EvalReport evaluate(TwgtmModel& model, const std::vector<SampleTriple>& samples, const std::vector<std::string>& ids,
                    const EvalOptions& options);

/// Writes `<out_dir>/eval_<task>.csv` and `<out_dir>/eval_<task>.json`.
void write_report(const EvalReport& report, const std::filesystem::path& out_dir);

}  // namespace twgtm
