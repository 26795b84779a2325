#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "twgtm/assembly.hpp"
#include "twgtm/datagen.hpp"
#include "twgtm/losses.hpp"
#include "twgtm/model.hpp"

namespace twgtm {

struct TrainConfig {
  Stage stage = Stage::kStage1;
  int64_t steps = 2000;
  int64_t batch_size = 4;
  double learning_rate = 1e-5;
  int64_t warmup_steps = 1000;
  double weight_decay = 1e-2;
  double lambda_mask = 5e-2;
  double lambda_dice = 0.9;
  double lambda_bce = 0.1;
  /// Fraction of steps that train VTON; the rest train VTOFF.
  double vton_ratio = 0.5;
  /// Keep the mask term in stage 2 (off: the stage-2 objective is pure MSE).
  bool stage2_mask_loss = false;
  std::uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  int64_t log_every = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Linear ramp from 0 over the warmup, then constant. `step` is 1-based.
double learning_rate_at(int64_t step, const TrainConfig& config);

/// Deterministic task schedule realising `vton_ratio` exactly over any prefix
/// (step is 0-based).
Task task_for_step(int64_t step, double vton_ratio);

/// Stacked, task-arranged tensors for one optimisation step.
struct TrainBatch {
  Task task = Task::kVton;
  Stage stage = Stage::kStage1;
  torch::Tensor reference;      // B x 3 x H x W (garment for VTON, person for VTOFF)
  torch::Tensor categories;     // int64 B
  torch::Tensor target_latent;  // E(h_i)
  torch::Tensor guidance_latent;  // E(h_f)
  torch::Tensor mask_latent;    // resize(h_m)
  torch::Tensor flat_mask;      // B x 1 x H x W ground-truth flat garment mask
};

/// Builds h_i, h_f and h_m for each sample (masks per select_training_mask),
/// encodes them and stacks the batch.
TrainBatch make_batch(const TwgtmModelImpl& model, const std::vector<const SampleTriple*>& samples, Task task,
                      Stage stage, std::uint64_t mask_seed);

struct StepLosses {
  torch::Tensor total;      // differentiable
  double diffusion = 0.0;
  double mask = 0.0;        // L_mask = lambda' dice + lambda'' bce (0 when unused)
  double dice = 0.0;
  double bce = 0.0;
  double total_value = 0.0;
  bool has_mask_term = false;
};

/// Noise and timesteps drawn for a step; fixed externally for equivalence checks.
struct StepNoise {
  torch::Tensor noise;      // same shape as target_latent
  torch::Tensor timesteps;  // int64 B in [1, T]
};
StepNoise draw_step_noise(const TrainBatch& batch, int64_t num_timesteps, std::uint64_t seed);

/// TFQ0 resized to the image grid (bilinear), B x 1 x H x W.
torch::Tensor predicted_flat_mask(const SrmOutput& spatial, int64_t height, int64_t width);

/// Stage 1: MSE(eps, eps_theta(I_t, t, F_SAM)) + lambda (lambda' dice + lambda'' bce)(TFQ0, M_c).
torch::Tensor stage1_objective(TwgtmModel& model, const TrainBatch& batch, const StepNoise& noise,
                               const TrainConfig& config, StepLosses* breakdown = nullptr);
/// Stage 2: MSE(eps, eps_theta(I_t, t, F_SAM, F_SRM)).
torch::Tensor stage2_objective(TwgtmModel& model, const TrainBatch& batch, const StepNoise& noise,
                               const TrainConfig& config, StepLosses* breakdown = nullptr);

struct TrainLogRow {
  int64_t step = 0;
  Stage stage = Stage::kStage1;
  Task task = Task::kVton;
  double total = 0.0;
  double diffusion = 0.0;
  double mask = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<TrainLogRow> log;
};

/// Runs one training stage on `samples`. Stage 2 must start from a stage-1
/// model (pass it in `model`, e.g. via open_checkpoint). Checkpoints are
/// written as `<out_dir>/stage<k>_step<n>.ckpt`; the log is appended to
/// `<out_dir>/metrics.csv`.
TrainResult train(TwgtmModel& model, const TrainConfig& config, const std::vector<SampleTriple>& samples,
                  const std::filesystem::path& out_dir,
                  const std::function<void(const TrainLogRow&)>& on_step = nullptr);

struct InferenceRequest {
  torch::Tensor person;                // 3 x H x W, always required
  std::optional<torch::Tensor> garment;  // VTON reference
  std::optional<torch::Tensor> mask;     // VTON person-space mask
  std::optional<torch::Tensor> box;      // VTOFF bounding-box mask (1 x H x W)
  Category category = Category::kUpper;
};

struct InferenceOptions {
  int64_t steps = 30;
  std::uint64_t seed = 0;
  ZeroMaskMode zero_mask_mode = ZeroMaskMode::kGeneratedHalfZero;
};

struct InferenceResult {
  torch::Tensor image;                         // 3 x H x W, generated half
  torch::Tensor canvas;                        // 3 x H x canvas width
  std::optional<torch::Tensor> flat_mask;      // VTOFF: TFQ0 resized to 1 x H x W
};

std::vector<InferenceResult> run_inference(TwgtmModel& model, Task task, const std::vector<InferenceRequest>& requests,
                                           const InferenceOptions& options);

}  // namespace twgtm
