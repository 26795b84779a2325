#include "twgtm/diffusion.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <stdexcept>
#include <string>

namespace twgtm {

NoiseSchedule make_schedule(int64_t num_timesteps, double beta_start, double beta_end, ScheduleKind kind) {
  if (num_timesteps < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || beta_start > beta_end || !(beta_end < 1.0)) {
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  if (kind != ScheduleKind::kLinear) throw std::invalid_argument("make_schedule: unsupported kind");
  NoiseSchedule s;
  s.num_timesteps = num_timesteps;
  s.alphas_cum.push_back(1.0);
  for (int64_t i = 0; i < num_timesteps; ++i) {
    const double frac = num_timesteps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(num_timesteps - 1);
    const double beta = beta_start + frac * (beta_end - beta_start);
    s.betas.push_back(beta);
    s.alphas_cum.push_back(s.alphas_cum.back() * (1.0 - beta));
  }
  return s;
}

torch::Tensor forward_noise(const torch::Tensor& z0, const torch::Tensor& timesteps, const torch::Tensor& noise,
                            const NoiseSchedule& schedule) {
  if (z0.sizes() != noise.sizes()) throw std::invalid_argument("forward_noise: noise shape differs from latent");
  auto t = timesteps.to(torch::kLong).reshape({-1});
  if ((t < 0).any().item<bool>() || (t > schedule.num_timesteps).any().item<bool>()) {
    throw std::invalid_argument("forward_noise: timestep outside [0, " + std::to_string(schedule.num_timesteps) + "]");
  }
  auto table = torch::tensor(schedule.alphas_cum, torch::kFloat64);
  auto alpha = table.index_select(0, t);
  std::vector<int64_t> shape(static_cast<std::size_t>(z0.dim()), 1);
  shape[0] = t.numel();
  if (t.numel() != 1 && t.numel() != z0.size(0)) throw std::invalid_argument("forward_noise: one timestep per element");
  alpha = alpha.reshape(shape).to(z0.dtype());
  return alpha.sqrt() * z0 + (1.0 - alpha).sqrt() * noise;
}

torch::Tensor forward_noise(const torch::Tensor& z0, int64_t t, const torch::Tensor& noise,
                            const NoiseSchedule& schedule) {
  return forward_noise(z0, torch::tensor({t}, torch::kLong), noise, schedule);
}

torch::Tensor diffusion_loss(const torch::Tensor& noise, const torch::Tensor& predicted) {
  if (noise.sizes() != predicted.sizes()) throw std::invalid_argument("diffusion_loss: shape mismatch");
  return (noise - predicted).pow(2).mean();
}

std::vector<int64_t> ddim_timesteps(int64_t num_timesteps, int64_t steps) {
  if (steps < 1 || steps > num_timesteps) {
    throw std::invalid_argument("sampler steps must be in [1, " + std::to_string(num_timesteps) + "]");
  }
  std::vector<int64_t> out;
  for (int64_t i = steps - 1; i >= 0; --i) out.push_back(1 + (i * num_timesteps) / steps);
  // Start from the noisiest step so the initial pure-noise latent is consistent.
  out.front() = num_timesteps;
  return out;
}

torch::Tensor ddim_sample(const NoisePredictor& predict, const torch::Tensor& guidance_latent,
                          const torch::Tensor& mask_latent, const NoiseSchedule& schedule,
                          const SamplerOptions& options) {
  torch::NoGradGuard no_grad;
  const auto timesteps = ddim_timesteps(schedule.num_timesteps, options.steps);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(options.seed);
  auto z = torch::randn(guidance_latent.sizes(), gen, guidance_latent.options());
  const auto batch = z.size(0);
  torch::Tensor x0;
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    const auto t = timesteps[i];
    const double alpha = schedule.alpha(t);
    const double alpha_prev = i + 1 < timesteps.size() ? schedule.alpha(timesteps[i + 1]) : 1.0;
    auto input = torch::cat({z, guidance_latent, mask_latent}, 1);
    auto eps = predict(input, torch::full({batch}, t, torch::kLong));
    x0 = (z - std::sqrt(1.0 - alpha) * eps) / std::sqrt(alpha);
    if (options.clip_denoised) x0 = x0.clamp(-1.0, 1.0);
    // Re-derive eps from the clipped estimate so the update stays on the DDIM path.
    auto eps_dir = (z - std::sqrt(alpha) * x0) / std::sqrt(1.0 - alpha);
    z = std::sqrt(alpha_prev) * x0 + std::sqrt(1.0 - alpha_prev) * eps_dir;
  }
  return z;
}

}  // namespace twgtm
