#include "twgtm/denoiser.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace twgtm {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int64_t dim) {
  const auto half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat64) / static_cast<double>(half));
  auto args = timesteps.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::cos(args), torch::sin(args)}, 1).to(torch::kFloat32);
}

ExtendedAttentionBlockImpl::ExtendedAttentionBlockImpl(int64_t dim, int64_t spatial_dim, int64_t context_dim,
                                                       int64_t heads_)
    : heads(heads_) {
  norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
  norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
  norm3 = register_module("norm3", nn::LayerNorm(nn::LayerNormOptions({dim})));
  to_q = register_module("to_q", nn::Linear(nn::LinearOptions(dim, dim).bias(false)));
  to_k = register_module("to_k", nn::Linear(nn::LinearOptions(dim, dim).bias(false)));
  to_v = register_module("to_v", nn::Linear(nn::LinearOptions(dim, dim).bias(false)));
  to_out = register_module("to_out", nn::Linear(dim, dim));
  to_k_spatial = register_module("to_k_spatial", nn::Linear(nn::LinearOptions(spatial_dim, dim).bias(false)));
  to_v_spatial = register_module("to_v_spatial", nn::Linear(nn::LinearOptions(spatial_dim, dim).bias(false)));
  zero_linear = register_module("zero_linear", nn::Linear(dim, dim));
  {
    torch::NoGradGuard no_grad;
    zero_linear->weight.zero_();
    zero_linear->bias.zero_();
  }
  semantic_attn = register_module("semantic_attn", MultiHeadAttention(dim, context_dim, heads_));
  ff = register_module("ff", FeedForward(dim));
}

torch::Tensor ExtendedAttentionBlockImpl::forward(const torch::Tensor& tokens, const torch::Tensor& spatial,
                                                  const torch::Tensor& semantic, torch::Tensor* self_weights,
                                                  torch::Tensor* spatial_weights, torch::Tensor* semantic_weights) {
  auto h = norm1(tokens);
  auto q = to_q(h);
  auto fused = to_out(scaled_dot_attention(q, to_k(h), to_v(h), heads, std::nullopt, self_weights));
  if (spatial.defined()) {
    auto cross = scaled_dot_attention(q, to_k_spatial(spatial), to_v_spatial(spatial), heads, std::nullopt,
                                      spatial_weights);
    fused = fused + zero_linear(cross);
  }
  auto x = tokens + fused;
  if (semantic.defined()) x = x + semantic_attn->forward(norm2(x), semantic, std::nullopt, semantic_weights);
  return x + ff(norm3(x));
}

ResBlockImpl::ResBlockImpl(int64_t in, int64_t out, int64_t time_dim) {
  norm1 = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(8, in)));
  conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
  time_proj = register_module("time_proj", nn::Linear(time_dim, out));
  norm2 = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(8, out)));
  conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)));
  if (in != out) skip = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in, out, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& time) {
  auto h = conv1(torch::silu(norm1(x)));
  h = h + time_proj(torch::silu(time)).unsqueeze(-1).unsqueeze(-1);
  h = conv2(torch::silu(norm2(h)));
  return (skip ? skip(x) : x) + h;
}

DenoiserImpl::DenoiserImpl(const DenoiserConfig& cfg) : config(cfg), extended_active_(cfg.enable_extended_attention) {
  if (cfg.latent_height % 4 != 0 || cfg.latent_width % 4 != 0) {
    throw std::invalid_argument("denoiser: latent grid must be divisible by 4");
  }
  const auto& w = cfg.widths;
  const auto time_dim = 4 * w[0];
  time_mlp = register_module("time_mlp", nn::Sequential(nn::Linear(w[0], time_dim), nn::SiLU(),
                                                        nn::Linear(time_dim, time_dim)));
  conv_in = register_module("conv_in", nn::Conv2d(nn::Conv2dOptions(cfg.in_channels, w[0], 3).padding(1)));

  int64_t ch = w[0];
  for (int level = 0; level < 3; ++level) {
    std::vector<ResBlock> blocks;
    for (int64_t r = 0; r < cfg.res_blocks; ++r) {
      blocks.push_back(register_module("down" + std::to_string(level) + "_res" + std::to_string(r),
                                       ResBlock(ch, w[level], time_dim)));
      ch = w[level];
    }
    down_res.push_back(blocks);
    down_attn.push_back(register_module("down" + std::to_string(level) + "_attn",
                                        ExtendedAttentionBlock(ch, w[level], cfg.context_dim, cfg.heads)));
    if (level < 2) {
      downsamplers.push_back(register_module("downsample" + std::to_string(level),
                                             nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1))));
    }
  }
  mid_res1 = register_module("mid_res1", ResBlock(ch, ch, time_dim));
  mid_attn = register_module("mid_attn", ExtendedAttentionBlock(ch, w[2], cfg.context_dim, cfg.heads));
  mid_res2 = register_module("mid_res2", ResBlock(ch, ch, time_dim));

  up_res.resize(3);
  up_attn.resize(3, nullptr);
  upsamplers.resize(2, nullptr);
  for (int level = 2; level >= 0; --level) {
    std::vector<ResBlock> blocks;
    int64_t in = ch + w[level];
    for (int64_t r = 0; r < cfg.res_blocks; ++r) {
      blocks.push_back(register_module("up" + std::to_string(level) + "_res" + std::to_string(r),
                                       ResBlock(in, w[level], time_dim)));
      in = w[level];
    }
    ch = w[level];
    up_res[level] = blocks;
    up_attn[level] = register_module("up" + std::to_string(level) + "_attn",
                                     ExtendedAttentionBlock(ch, w[level], cfg.context_dim, cfg.heads));
    if (level > 0) {
      upsamplers[level - 1] = register_module("upsample" + std::to_string(level),
                                              nn::Conv2d(nn::Conv2dOptions(ch, w[level - 1], 3).padding(1)));
      ch = w[level - 1];
    }
  }
  norm_out = register_module("norm_out", nn::GroupNorm(nn::GroupNormOptions(8, w[0])));
  conv_out = register_module("conv_out", nn::Conv2d(nn::Conv2dOptions(w[0], cfg.out_channels, 3).padding(1)));
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& input, const torch::Tensor& timesteps,
                                    const torch::Tensor& semantic, const std::vector<torch::Tensor>& spatial) {
  if (input.dim() != 4 || input.size(1) != config.in_channels || input.size(2) != config.latent_height ||
      input.size(3) != config.latent_width) {
    throw std::invalid_argument("denoiser: expected input B x " + std::to_string(config.in_channels) + " x " +
                                std::to_string(config.latent_height) + " x " + std::to_string(config.latent_width));
  }
  if (timesteps.numel() != input.size(0)) throw std::invalid_argument("denoiser: one timestep per batch element");
  if ((timesteps < 1).any().item<bool>() || (timesteps > config.num_timesteps).any().item<bool>()) {
    throw std::invalid_argument("denoiser: timestep outside [1, " + std::to_string(config.num_timesteps) + "]");
  }
  const bool use_spatial = extended_active_;
  const auto grids = config.attention_grids();
  if (use_spatial) {
    if (spatial.size() != 3) throw std::invalid_argument("denoiser: extended attention requires spatial features");
    for (int l = 0; l < 3; ++l) {
      const auto& s = spatial[static_cast<std::size_t>(l)];
      if (!s.defined() || s.dim() != 4 || s.size(1) != config.widths[l] || s.size(2) != grids[l][0] ||
          s.size(3) != grids[l][1]) {
        throw std::invalid_argument("denoiser: spatial feature " + std::to_string(l) + " has wrong resolution");
      }
    }
  }
  const torch::Tensor sem = config.enable_native_crossattn ? semantic : torch::Tensor();

  auto site = [&](ExtendedAttentionBlock& block, const torch::Tensor& h, int level) {
    const auto height = h.size(2);
    const auto width = h.size(3);
    auto spatial_tokens = use_spatial ? to_tokens(spatial[static_cast<std::size_t>(level)]) : torch::Tensor();
    return from_tokens(block(to_tokens(h), spatial_tokens, sem), height, width);
  };

  auto temb = time_mlp->forward(timestep_embedding(timesteps.reshape({-1}), config.widths[0]).to(input.dtype()));
  auto h = conv_in(input);
  std::vector<torch::Tensor> skips;
  for (int level = 0; level < 3; ++level) {
    for (auto& block : down_res[static_cast<std::size_t>(level)]) h = block(h, temb);
    h = site(down_attn[static_cast<std::size_t>(level)], h, level);
    skips.push_back(h);
    if (level < 2) h = downsamplers[static_cast<std::size_t>(level)](h);
  }
  h = mid_res1(h, temb);
  h = site(mid_attn, h, 2);
  h = mid_res2(h, temb);
  for (int level = 2; level >= 0; --level) {
    h = torch::cat({h, skips[static_cast<std::size_t>(level)]}, 1);
    for (auto& block : up_res[static_cast<std::size_t>(level)]) h = block(h, temb);
    h = site(up_attn[static_cast<std::size_t>(level)], h, level);
    if (level > 0) {
      h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
      h = upsamplers[static_cast<std::size_t>(level - 1)](h);
    }
  }
  return conv_out(torch::silu(norm_out(h)));
}

std::vector<torch::Tensor> DenoiserImpl::zero_linear_parameters() {
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters()) {
    if (item.key().find("zero_linear") != std::string::npos) out.push_back(item.value());
  }
  return out;
}

}  // namespace twgtm
