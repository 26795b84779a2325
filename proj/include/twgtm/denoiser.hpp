#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "twgtm/attention.hpp"

namespace twgtm {

struct DenoiserConfig {
  int64_t in_channels = 97;   // 2c + 1
  int64_t out_channels = 48;  // c
  std::array<int64_t, 3> widths{64, 128, 256};
  int64_t res_blocks = 2;
  int64_t context_dim = 128;  // width of the semantic tokens
  int64_t heads = 4;
  int64_t latent_height = 16;
  int64_t latent_width = 24;
  int64_t num_timesteps = 1000;
  bool enable_extended_attention = true;
  bool enable_native_crossattn = true;

  /// (h, w) of the attention grid at each level.
  std::array<std::array<int64_t, 2>, 3> attention_grids() const {
    return {{{latent_height, latent_width}, {latent_height / 2, latent_width / 2}, {latent_height / 4, latent_width / 4}}};
  }
};

/// Sinusoidal embedding of integer timesteps: B -> B x dim.
torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int64_t dim);

/// Attention site of the denoiser:
///   fused = SelfAttn(Q,K,V) + ZLL(CrossAttn(Q, K', V'))   (K',V' from spatial features)
///   x    += fused
///   x    += CrossAttn(x, semantic tokens)
///   x    += FeedForward(x)
/// The zero linear layer (ZLL) starts at weight = bias = 0, so the spatial
/// branch is a no-op until trained.
struct ExtendedAttentionBlockImpl : torch::nn::Module {
  ExtendedAttentionBlockImpl(int64_t dim, int64_t spatial_dim, int64_t context_dim, int64_t heads);

  /// tokens: B x L x dim; spatial: B x L' x spatial_dim or undefined; semantic: B x S x context_dim or undefined.
  torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& spatial, const torch::Tensor& semantic,
                        torch::Tensor* self_weights = nullptr, torch::Tensor* spatial_weights = nullptr,
                        torch::Tensor* semantic_weights = nullptr);

  int64_t heads;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
  torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
  torch::nn::Linear to_k_spatial{nullptr}, to_v_spatial{nullptr};
  torch::nn::Linear zero_linear{nullptr};
  MultiHeadAttention semantic_attn{nullptr};
  FeedForward ff{nullptr};
};
TORCH_MODULE(ExtendedAttentionBlock);

struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(int64_t in, int64_t out, int64_t time_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& time);

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear time_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/// Three-level UNet predicting the noise on the target latent channels.
struct DenoiserImpl : torch::nn::Module {
  explicit DenoiserImpl(const DenoiserConfig& config);

  /// input: B x in_channels x h x w; timesteps: int64 B in [1, T];
  /// semantic: B x S x context_dim; spatial: three maps (required while the
  /// extended attention is active). Returns B x out_channels x h x w.
  torch::Tensor forward(const torch::Tensor& input, const torch::Tensor& timesteps, const torch::Tensor& semantic,
                        const std::vector<torch::Tensor>& spatial = {});

  /// Runtime gate for the spatial branch; never exceeds the config flag.
  void set_extended_attention(bool on) { extended_active_ = on && config.enable_extended_attention; }
  bool extended_attention_active() const { return extended_active_; }

  std::vector<torch::Tensor> zero_linear_parameters();

  DenoiserConfig config;
  bool extended_active_ = false;
  torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};
  torch::nn::Sequential time_mlp{nullptr};
  std::vector<std::vector<ResBlock>> down_res, up_res;
  std::vector<ExtendedAttentionBlock> down_attn, up_attn;
  std::vector<torch::nn::Conv2d> downsamplers, upsamplers;
  ResBlock mid_res1{nullptr}, mid_res2{nullptr};
  ExtendedAttentionBlock mid_attn{nullptr};
};
TORCH_MODULE(Denoiser);

}  // namespace twgtm
