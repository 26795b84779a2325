#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "twgtm/attention.hpp"

namespace twgtm {

struct SamConfig {
  int64_t image_height = 64;
  int64_t image_width = 48;
  int64_t encoder_dim = 128;   // width of the frozen encoder tokens
  int64_t dim = 128;           // D, shared with the spatial module and the UNet context
  int64_t num_queries = 8;     // N
  int64_t prompt_tokens = 4;   // P tokens per category
  int64_t depth = 2;           // query transformer blocks
  int64_t heads = 4;
  std::uint64_t frozen_seed = 0x5eedc11bULL;
};

struct SemanticTokens {
  torch::Tensor global;    // B x 1 x encoder_dim
  torch::Tensor patches;   // B x L x encoder_dim
  torch::Tensor prompt;    // B x P x D
  torch::Tensor filtered;  // B x N x D   (query transformer output)
  torch::Tensor combined;  // B x (1+N) x D
};

/// Four stride-2 convolutions with fixed seeded weights (patch size 16).
/// Stands in for a pretrained image encoder; its parameters never train.
struct FrozenImageEncoderImpl : torch::nn::Module {
  FrozenImageEncoderImpl(int64_t out_dim, std::uint64_t seed);
  /// Returns (global token B x 1 x out_dim, patch tokens B x L x out_dim).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& image);

  std::vector<torch::nn::Conv2d> convs;
};
TORCH_MODULE(FrozenImageEncoder);

/// Semantic abstraction path: frozen encoder, learnable queries filtered by a
/// category prompt, and the global token prepended.
struct SemanticAbstractionImpl : torch::nn::Module {
  explicit SemanticAbstractionImpl(const SamConfig& config);

  std::pair<torch::Tensor, torch::Tensor> encode_reference(const torch::Tensor& image);
  /// categories: int64 tensor of size B.
  torch::Tensor prompt_tokens(const torch::Tensor& categories);
  torch::Tensor qformer_filter(const torch::Tensor& patches, const torch::Tensor& prompt);
  torch::Tensor build_sam(const torch::Tensor& global, const torch::Tensor& filtered);

  SemanticTokens forward(const torch::Tensor& image, const torch::Tensor& categories);

  /// Parameters excluding the frozen encoder.
  std::vector<torch::Tensor> trainable_parameters();

  SamConfig config;
  FrozenImageEncoder encoder{nullptr};
  torch::nn::Linear patch_proj{nullptr}, global_proj{nullptr};
  torch::Tensor queries;       // N x D
  torch::Tensor prompt_table;  // 3 x P x D
  std::vector<DecoderBlock> blocks;
  torch::nn::LayerNorm out_norm{nullptr};
};
TORCH_MODULE(SemanticAbstraction);

}  // namespace twgtm
