#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

namespace twgtm {

enum class ScheduleKind { kLinear };

/// betas[s - 1] = beta_s for s = 1..T; alphas_cum[t] = prod_{s<=t} (1 - beta_s)
/// with alphas_cum[0] = 1.
struct NoiseSchedule {
  int64_t num_timesteps = 0;
  std::vector<double> betas;
  std::vector<double> alphas_cum;

  double alpha(int64_t t) const { return alphas_cum.at(static_cast<std::size_t>(t)); }
};

NoiseSchedule make_schedule(int64_t num_timesteps, double beta_start = 1e-4, double beta_end = 0.02,
                            ScheduleKind kind = ScheduleKind::kLinear);

/// z_t = sqrt(alpha_t) z0 + sqrt(1 - alpha_t) eps. `timesteps` holds one
/// integer in [0, T] per batch element (or a single value for all).
torch::Tensor forward_noise(const torch::Tensor& z0, const torch::Tensor& timesteps, const torch::Tensor& noise,
                            const NoiseSchedule& schedule);
torch::Tensor forward_noise(const torch::Tensor& z0, int64_t t, const torch::Tensor& noise,
                            const NoiseSchedule& schedule);

/// Mean squared error over all elements.
torch::Tensor diffusion_loss(const torch::Tensor& noise, const torch::Tensor& predicted);

/// Descending DDIM timesteps in [1, T] for a given number of steps.
std::vector<int64_t> ddim_timesteps(int64_t num_timesteps, int64_t steps);

/// (noisy latent input channels, timesteps) -> predicted noise on the target channels.
using NoisePredictor = std::function<torch::Tensor(const torch::Tensor& model_input, const torch::Tensor& timesteps)>;

struct SamplerOptions {
  int64_t steps = 30;
  std::uint64_t seed = 0;
  bool clip_denoised = true;
};

/// Deterministic DDIM (eta = 0). The target channels start from seeded unit
/// Gaussian noise; guidance and mask channels are concatenated unchanged at
/// every step. Returns the clean target latent estimate.
torch::Tensor ddim_sample(const NoisePredictor& predict, const torch::Tensor& guidance_latent,
                          const torch::Tensor& mask_latent, const NoiseSchedule& schedule,
                          const SamplerOptions& options);

}  // namespace twgtm
