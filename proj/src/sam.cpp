#include "twgtm/sam.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <stdexcept>

#include "twgtm/common.hpp"

namespace twgtm {

namespace nn = torch::nn;

FrozenImageEncoderImpl::FrozenImageEncoderImpl(int64_t out_dim, std::uint64_t seed) {
  const std::vector<int64_t> widths{3, 32, 64, 128, out_dim};
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    auto conv = nn::Conv2d(nn::Conv2dOptions(widths[i], widths[i + 1], 3).stride(2).padding(1));
    const double fan_in = static_cast<double>(widths[i] * 9);
    conv->weight.copy_(torch::randn(conv->weight.sizes(), gen) * std::sqrt(2.0 / fan_in));
    conv->bias.copy_(torch::randn(conv->bias.sizes(), gen) * 0.01);
    conv->weight.set_requires_grad(false);
    conv->bias.set_requires_grad(false);
    convs.push_back(register_module("conv" + std::to_string(i), conv));
  }
}

std::pair<torch::Tensor, torch::Tensor> FrozenImageEncoderImpl::forward(const torch::Tensor& image) {
  auto h = image;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    h = convs[i](h);
    if (i + 1 < convs.size()) h = torch::gelu(h);
  }
  auto patches = to_tokens(h);
  return {patches.mean(1, /*keepdim=*/true), patches};
}

SemanticAbstractionImpl::SemanticAbstractionImpl(const SamConfig& cfg) : config(cfg) {
  if (cfg.image_height % 16 != 0 || cfg.image_width % 16 != 0) {
    throw std::invalid_argument("semantic module: image size must be divisible by 16");
  }
  encoder = register_module("encoder", FrozenImageEncoder(cfg.encoder_dim, cfg.frozen_seed));
  patch_proj = register_module("patch_proj", nn::Linear(cfg.encoder_dim, cfg.dim));
  global_proj = register_module("global_proj", nn::Linear(cfg.encoder_dim, cfg.dim));
  queries = register_parameter("queries", torch::randn({cfg.num_queries, cfg.dim}) * 0.02);
  prompt_table = register_parameter("prompt_table", torch::randn({kNumCategories, cfg.prompt_tokens, cfg.dim}) * 0.02);
  for (int64_t i = 0; i < cfg.depth; ++i) {
    blocks.push_back(register_module("block" + std::to_string(i), DecoderBlock(cfg.dim, cfg.dim, cfg.heads)));
  }
  out_norm = register_module("out_norm", nn::LayerNorm(nn::LayerNormOptions({cfg.dim})));
}

std::pair<torch::Tensor, torch::Tensor> SemanticAbstractionImpl::encode_reference(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(2) != config.image_height || image.size(3) != config.image_width) {
    throw std::invalid_argument("encode_reference: expected B x 3 x " + std::to_string(config.image_height) + " x " +
                                std::to_string(config.image_width));
  }
  return encoder(image);
}

torch::Tensor SemanticAbstractionImpl::prompt_tokens(const torch::Tensor& categories) {
  return prompt_table.index_select(0, categories.to(torch::kLong));
}

torch::Tensor SemanticAbstractionImpl::qformer_filter(const torch::Tensor& patches, const torch::Tensor& prompt) {
  const auto b = patches.size(0);
  auto context = torch::cat({patch_proj(patches), prompt}, 1);
  auto h = queries.unsqueeze(0).expand({b, config.num_queries, config.dim});
  for (auto& block : blocks) h = block(h, context);
  return out_norm(h);
}

torch::Tensor SemanticAbstractionImpl::build_sam(const torch::Tensor& global, const torch::Tensor& filtered) {
  return torch::cat({global_proj(global), filtered}, 1);
}

SemanticTokens SemanticAbstractionImpl::forward(const torch::Tensor& image, const torch::Tensor& categories) {
  SemanticTokens out;
  std::tie(out.global, out.patches) = encode_reference(image);
  out.prompt = prompt_tokens(categories);
  out.filtered = qformer_filter(out.patches, out.prompt);
  out.combined = build_sam(out.global, out.filtered);
  return out;
}

std::vector<torch::Tensor> SemanticAbstractionImpl::trainable_parameters() {
  std::vector<torch::Tensor> out;
  for (auto& p : parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

}  // namespace twgtm
