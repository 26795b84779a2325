#include "twgtm/training.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include "twgtm/diffusion.hpp"

namespace twgtm {

namespace F = torch::nn::functional;

void TrainConfig::validate() const {
  if (stage != Stage::kStage1 && stage != Stage::kStage2) throw std::invalid_argument("train: stage must be 1 or 2");
  if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (warmup_steps < 0 || warmup_steps > steps) {
    throw std::invalid_argument("train: warmup (" + std::to_string(warmup_steps) + ") must lie in [0, steps=" +
                                std::to_string(steps) + "]");
  }
  if (vton_ratio < 0.0 || vton_ratio > 1.0) throw std::invalid_argument("train: vton ratio must lie in [0, 1]");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"stage", stage == Stage::kStage1 ? 1 : 2},
          {"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"warmup_steps", warmup_steps},
          {"weight_decay", weight_decay},
          {"lambda_mask", lambda_mask},
          {"lambda_dice", lambda_dice},
          {"lambda_bce", lambda_bce},
          {"vton_ratio", vton_ratio},
          {"stage2_mask_loss", stage2_mask_loss},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every}};
}

double learning_rate_at(int64_t step, const TrainConfig& config) {
  if (config.warmup_steps <= 0 || step >= config.warmup_steps) return config.learning_rate;
  return config.learning_rate * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
}

Task task_for_step(int64_t step, double vton_ratio) {
  const auto before = static_cast<int64_t>(std::floor(static_cast<double>(step) * vton_ratio));
  const auto after = static_cast<int64_t>(std::floor(static_cast<double>(step + 1) * vton_ratio));
  return after > before ? Task::kVton : Task::kVtoff;
}

TrainBatch make_batch(const TwgtmModelImpl& model, const std::vector<const SampleTriple*>& samples, Task task,
                      Stage stage, std::uint64_t mask_seed) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::vector<torch::Tensor> targets, guidances, masks, references, flat_masks;
  std::vector<int64_t> categories;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = *samples[i];
    const auto effective = select_training_mask(s, task, stage, mix_seed(mask_seed, i));
    auto target = build_target(s.person_image, s.garment_image, task);
    auto guidance = build_guidance(s.person_image, s.garment_image, effective, task);
    auto mask = build_mask_channel(effective, task);
    if (!model.config.spatial_concat) {
      target = left_half(target);
      guidance = left_half(guidance);
      mask = left_half(mask);
    }
    targets.push_back(target);
    guidances.push_back(guidance);
    masks.push_back(mask);
    references.push_back(task == Task::kVton ? s.garment_image : s.person_image);
    flat_masks.push_back(s.flat_mask);
    categories.push_back(static_cast<int64_t>(s.category));
  }
  TrainBatch b;
  b.task = task;
  b.stage = stage;
  b.reference = torch::stack(references);
  b.categories = torch::tensor(categories, torch::kLong);
  b.target_latent = model.codec.encode(torch::stack(targets)).data;
  b.guidance_latent = model.codec.encode(torch::stack(guidances)).data;
  b.mask_latent = resize_mask(torch::stack(masks), model.codec.factor());
  b.flat_mask = torch::stack(flat_masks);
  return b;
}

StepNoise draw_step_noise(const TrainBatch& batch, int64_t num_timesteps, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  StepNoise n;
  n.noise = torch::randn(batch.target_latent.sizes(), gen, batch.target_latent.options());
  n.timesteps = torch::randint(1, num_timesteps + 1, {batch.target_latent.size(0)}, gen, torch::kLong);
  return n;
}

torch::Tensor predicted_flat_mask(const SrmOutput& spatial, int64_t height, int64_t width) {
  return F::interpolate(spatial.task.garment_mask,
                        F::InterpolateFuncOptions()
                            .size(std::vector<int64_t>{height, width})
                            .mode(torch::kBilinear)
                            .align_corners(false));
}

namespace {

torch::Tensor diffusion_term(TwgtmModel& model, const TrainBatch& batch, const StepNoise& noise,
                             const Conditioning& cond) {
  auto noised = forward_noise(batch.target_latent, noise.timesteps, noise.noise, model->schedule);
  auto input = assemble(noised, batch.guidance_latent, batch.mask_latent, batch.task, batch.stage, 0);
  auto predicted = model->predict_noise(input.tensor, noise.timesteps, cond);
  return diffusion_loss(noise.noise, predicted);
}

torch::Tensor mask_term(TwgtmModel& model, const TrainBatch& batch, const Conditioning& cond,
                        const TrainConfig& config, StepLosses* breakdown) {
  auto pred = predicted_flat_mask(*cond.spatial, batch.flat_mask.size(2), batch.flat_mask.size(3));
  auto dice = dice_loss(pred, batch.flat_mask);
  auto bce = bce_loss(pred, batch.flat_mask);
  auto term = config.lambda_dice * dice + config.lambda_bce * bce;
  if (breakdown) {
    breakdown->dice = dice.item<double>();
    breakdown->bce = bce.item<double>();
    breakdown->mask = term.item<double>();
    breakdown->has_mask_term = true;
  }
  (void)model;
  return term;
}

}  // namespace

torch::Tensor stage1_objective(TwgtmModel& model, const TrainBatch& batch, const StepNoise& noise,
                               const TrainConfig& config, StepLosses* breakdown) {
  model->set_stage(Stage::kStage1);
  // The spatial module runs for its garment-mask output only; its features
  // do not reach the denoiser in this stage.
  auto cond = model->condition(batch.reference, batch.categories, /*with_spatial=*/true);
  auto diffusion = diffusion_term(model, batch, noise, cond);
  auto mask = mask_term(model, batch, cond, config, breakdown);
  auto total = diffusion + config.lambda_mask * mask;
  if (breakdown) {
    breakdown->diffusion = diffusion.item<double>();
    breakdown->total_value = total.item<double>();
    breakdown->total = total;
  }
  return total;
}

torch::Tensor stage2_objective(TwgtmModel& model, const TrainBatch& batch, const StepNoise& noise,
                               const TrainConfig& config, StepLosses* breakdown) {
  model->set_stage(Stage::kStage2);
  auto cond = model->condition(batch.reference, batch.categories, /*with_spatial=*/true);
  auto diffusion = diffusion_term(model, batch, noise, cond);
  auto total = diffusion;
  if (config.stage2_mask_loss) total = total + config.lambda_mask * mask_term(model, batch, cond, config, breakdown);
  if (breakdown) {
    breakdown->diffusion = diffusion.item<double>();
    breakdown->total_value = total.item<double>();
    breakdown->total = total;
  }
  return total;
}

TrainResult train(TwgtmModel& model, const TrainConfig& config, const std::vector<SampleTriple>& samples,
                  const std::filesystem::path& out_dir, const std::function<void(const TrainLogRow&)>& on_step) {
  config.validate();
  if (samples.empty()) throw std::invalid_argument("train: no training samples");
  std::filesystem::create_directories(out_dir);
  const int stage_number = config.stage == Stage::kStage1 ? 1 : 2;

  // Stage 2 follows the stage-2 objective literally: the garment-mask head
  // gets no gradient unless the mask term is kept.
  const bool freeze_garment_head = config.stage == Stage::kStage2 && !config.stage2_mask_loss;
  const auto garment_head = model->srm->heads->garment_head_parameters();
  for (auto p : garment_head) p.set_requires_grad(!freeze_garment_head);

  auto params = config.stage == Stage::kStage2 && !freeze_garment_head ? model->trainable_parameters(Stage::kStage1)
                                                                       : model->trainable_parameters(config.stage);
  torch::optim::AdamW optimizer(params,
                                torch::optim::AdamWOptions(config.learning_rate).weight_decay(config.weight_decay));

  const auto log_path = out_dir / "metrics.csv";
  const bool new_log = !std::filesystem::exists(log_path);
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw std::runtime_error("cannot write '" + log_path.string() + "'");
  if (new_log) log << "step,stage,task,total,diffusion,mask,lr\n";
  log << std::setprecision(9);

  TrainResult result;
  auto write_checkpoint = [&](int64_t step) {
    const auto path = out_dir / ("stage" + std::to_string(stage_number) + "_step" + std::to_string(step) + ".ckpt");
    CheckpointMeta meta;
    meta.model = model->config;
    meta.stage = stage_number;
    meta.step = step;
    meta.extra = {{"train", config.to_json()}};
    save_checkpoint(path, model, meta);
    result.checkpoints.push_back(path);
    return path;
  };

  const std::uint64_t stage_seed = mix_seed(config.seed, static_cast<std::uint64_t>(stage_number));
  for (int64_t step = 0; step < config.steps; ++step) {
    const auto task = task_for_step(step, config.vton_ratio);
    const auto step_seed = mix_seed(stage_seed, static_cast<std::uint64_t>(step));
    Rng rng(step_seed);
    std::vector<const SampleTriple*> picks;
    for (int64_t i = 0; i < config.batch_size; ++i) {
      picks.push_back(&samples[static_cast<std::size_t>(rng.randint(0, static_cast<int64_t>(samples.size()) - 1))]);
    }
    const auto batch = make_batch(*model, picks, task, config.stage, mix_seed(step_seed, 1));
    const auto noise = draw_step_noise(batch, model->config.num_timesteps, mix_seed(step_seed, 2));

    const double lr = learning_rate_at(step + 1, config);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    }
    optimizer.zero_grad();
    StepLosses losses;
    auto total = config.stage == Stage::kStage1 ? stage1_objective(model, batch, noise, config, &losses)
                                                : stage2_objective(model, batch, noise, config, &losses);
    total.backward();
    optimizer.step();

    TrainLogRow row{step + 1, config.stage, task, losses.total_value, losses.diffusion, losses.mask, lr};
    if (config.log_every > 0 && ((step + 1) % config.log_every == 0 || step + 1 == config.steps)) {
      log << row.step << ',' << stage_number << ',' << to_string(task) << ',' << row.total << ',' << row.diffusion
          << ',' << row.mask << ',' << row.learning_rate << '\n';
    }
    result.log.push_back(row);
    if (on_step) on_step(row);
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 && step + 1 != config.steps) {
      write_checkpoint(step + 1);
    }
  }
  log.flush();
  result.final_checkpoint = write_checkpoint(config.steps);
  for (auto p : garment_head) p.set_requires_grad(true);
  return result;
}

std::vector<InferenceResult> run_inference(TwgtmModel& model, Task task, const std::vector<InferenceRequest>& requests,
                                           const InferenceOptions& options) {
  if (requests.empty()) return {};
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> guidances, masks, references;
  std::vector<int64_t> categories;
  for (const auto& r : requests) {
    if (!r.person.defined()) throw std::invalid_argument("inference: person image is required");
    InferenceCanvases canvases;
    if (task == Task::kVton) {
      if (!r.garment || !r.mask) throw std::invalid_argument("inference: VTON needs a garment image and a person mask");
      canvases = vton_inference_canvases(r.person, *r.mask, *r.garment);
      references.push_back(*r.garment);
    } else {
      canvases = vtoff_inference_canvases(r.person, r.box, options.zero_mask_mode);
      references.push_back(r.person);
    }
    if (!model->config.spatial_concat) {
      canvases.guidance = left_half(canvases.guidance);
      canvases.mask_channel = left_half(canvases.mask_channel);
    }
    guidances.push_back(canvases.guidance);
    masks.push_back(canvases.mask_channel);
    categories.push_back(static_cast<int64_t>(r.category));
  }
  auto guidance_latent = model->codec.encode(torch::stack(guidances)).data;
  auto mask_latent = resize_mask(torch::stack(masks), model->codec.factor());
  auto cond = model->condition(torch::stack(references), torch::tensor(categories, torch::kLong), true);

  NoisePredictor predictor = [&](const torch::Tensor& input, const torch::Tensor& t) {
    return model->predict_noise(input, t, cond);
  };
  SamplerOptions sampler;
  sampler.steps = options.steps;
  sampler.seed = options.seed;
  auto latent = ddim_sample(predictor, guidance_latent, mask_latent, model->schedule, sampler);
  auto canvas = model->codec.decode(latent).clamp(-1.0, 1.0);

  const auto height = model->config.image_height;
  const auto width = model->config.image_width;
  auto flat = predicted_flat_mask(*cond.spatial, height, width);
  std::vector<InferenceResult> out;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    InferenceResult r;
    r.canvas = canvas[static_cast<int64_t>(i)];
    r.image = model->config.spatial_concat ? crop_result(r.canvas, task) : r.canvas;
    if (task == Task::kVtoff) r.flat_mask = flat[static_cast<int64_t>(i)];
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace twgtm
