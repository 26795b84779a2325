#include "twgtm/srm.hpp"

#include <stdexcept>
#include <string>

namespace twgtm {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Sequential conv_stage(int64_t in, int64_t out) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(2).padding(1)),
                        nn::GroupNorm(nn::GroupNormOptions(8, out)), nn::GELU(),
                        nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)), nn::GELU());
}

}  // namespace

torch::Tensor pool_mask_to_keys(const torch::Tensor& spatial_mask, int64_t factor) {
  auto m = factor > 1 ? F::avg_pool2d(spatial_mask, F::AvgPool2dFuncOptions(factor).stride(factor)) : spatial_mask;
  return m.flatten(2);
}

PyramidEncoderImpl::PyramidEncoderImpl(int64_t dim) {
  stem = conv_stage(3, dim / 2);
  stem->extend(*conv_stage(dim / 2, dim));
  register_module("stem", stem);
  down2 = register_module("down2", conv_stage(dim, dim));
  down3 = register_module("down3", conv_stage(dim, dim));
  proj1 = register_module("proj1", nn::Conv2d(nn::Conv2dOptions(dim, dim, 1)));
  proj2 = register_module("proj2", nn::Conv2d(nn::Conv2dOptions(dim, dim, 1)));
  proj3 = register_module("proj3", nn::Conv2d(nn::Conv2dOptions(dim, dim, 1)));
}

FeaturePyramid PyramidEncoderImpl::forward(const torch::Tensor& image) {
  auto f1 = stem->forward(image);
  auto f2 = down2->forward(f1);
  auto f3 = down3->forward(f2);
  return {proj1(f1), proj2(f2), proj3(f3)};
}

TaskFormerUnitImpl::TaskFormerUnitImpl(int64_t dim, int64_t heads) {
  block1 = register_module("block1", DecoderBlock(dim, dim, heads));
  block2 = register_module("block2", DecoderBlock(dim, dim, heads));
  block3 = register_module("block3", DecoderBlock(dim, dim, heads));
}

torch::Tensor TaskFormerUnitImpl::forward(const torch::Tensor& queries, const torch::Tensor& semantic,
                                          const FeaturePyramid& pyramid, const UnitMasks& previous) {
  const auto k = queries.size(1);
  if (previous.query_mask.size(1) != k || previous.query_mask.size(2) != semantic.size(1)) {
    throw std::invalid_argument("taskformer unit: query mask must be B x K x N");
  }
  const auto ratio2 = previous.spatial_mask.size(2) / pyramid.h2.size(2);
  const auto ratio3 = previous.spatial_mask.size(2) / pyramid.h3.size(2);
  auto after_semantic = block1(queries, semantic, previous.query_mask);
  auto after_h2 = block2(after_semantic, to_tokens(pyramid.h2), pool_mask_to_keys(previous.spatial_mask, ratio2));
  return block3(after_h2, to_tokens(pyramid.h3), pool_mask_to_keys(previous.spatial_mask, ratio3));
}

ProjectionHeadsImpl::ProjectionHeadsImpl(int64_t dim, int64_t k) : num_queries(k) {
  if (k < 2) throw std::invalid_argument("spatial module needs at least 2 queries, got " + std::to_string(k));
  query_linear = register_module("query_linear", nn::Linear(dim, dim));
  mask_mlp = register_module("mask_mlp", Mlp(dim, dim));
  task_mlp0 = register_module("task_mlp0", Mlp(dim, dim));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  task_w1 = register_parameter("task_w1", torch::randn({k - 1, dim, dim}) * scale);
  task_b1 = register_parameter("task_b1", torch::zeros({k - 1, dim}));
  task_w2 = register_parameter("task_w2", torch::randn({k - 1, dim, dim}) * scale);
  task_b2 = register_parameter("task_b2", torch::zeros({k - 1, dim}));
}

UnitMasks ProjectionHeadsImpl::project_masks(const torch::Tensor& queries, const torch::Tensor& semantic,
                                             const torch::Tensor& h1) {
  UnitMasks out;
  out.query_mask = torch::sigmoid(torch::einsum("bkd,bnd->bkn", {query_linear(queries), semantic}));
  out.spatial_mask = torch::sigmoid(torch::einsum("bkd,bdhw->bkhw", {mask_mlp(queries), h1}));
  return out;
}

TaskProjection ProjectionHeadsImpl::project_task(const torch::Tensor& queries, const torch::Tensor& h1) {
  if (queries.size(1) < 2) throw std::invalid_argument("project_task: need K >= 2 queries");
  TaskProjection out;
  auto first = task_mlp0(queries.select(1, 0));
  out.garment_mask = torch::sigmoid(torch::einsum("bd,bdhw->bhw", {first, h1})).unsqueeze(1);
  auto rest = queries.narrow(1, 1, queries.size(1) - 1);
  auto hidden = torch::gelu(torch::einsum("bkd,kde->bke", {rest, task_w1}) + task_b1);
  auto embed = torch::einsum("bke,kef->bkf", {hidden, task_w2}) + task_b2;
  out.rest = torch::einsum("bkd,bdhw->bkhw", {embed, h1});
  return out;
}

std::vector<torch::Tensor> ProjectionHeadsImpl::garment_head_parameters() { return task_mlp0->parameters(); }

SrmDecoderImpl::SrmDecoderImpl(const SrmConfig& cfg) : config(cfg) {
  const auto task_h = cfg.image_height / 4;
  const auto task_w = cfg.image_width / 4;
  if (cfg.latent_height != task_h || (cfg.latent_width != task_w && cfg.latent_width != 2 * task_w)) {
    throw std::invalid_argument("spatial decoder: denoiser grid " + std::to_string(cfg.latent_height) + "x" +
                                std::to_string(cfg.latent_width) + " incompatible with task maps " +
                                std::to_string(task_h) + "x" + std::to_string(task_w));
  }
  int64_t in = cfg.num_queries;
  for (int level = 0; level < 3; ++level) {
    const auto out = cfg.out_channels[level];
    const auto stride = level == 0 ? 1 : 2;
    convs.push_back(register_module("conv" + std::to_string(level),
                                    nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1))));
    const auto h = cfg.latent_height >> level;
    const auto w = cfg.latent_width >> level;
    positions.push_back(register_parameter("pos" + std::to_string(level), torch::randn({1, out, h, w}) * 0.02));
    norms1.push_back(register_module("norm1_" + std::to_string(level), nn::LayerNorm(nn::LayerNormOptions({out}))));
    norms2.push_back(register_module("norm2_" + std::to_string(level), nn::LayerNorm(nn::LayerNormOptions({out}))));
    attns.push_back(register_module("attn" + std::to_string(level), MultiHeadAttention(out, out, cfg.heads)));
    ffs.push_back(register_module("ff" + std::to_string(level), FeedForward(out, 2)));
    in = out;
  }
}

std::vector<torch::Tensor> SrmDecoderImpl::forward(const torch::Tensor& task_maps) {
  std::vector<torch::Tensor> out;
  auto h = task_maps;
  for (std::size_t level = 0; level < convs.size(); ++level) {
    h = convs[level](h);
    if (level == 0 && h.size(3) * 2 == config.latent_width) {
      // Two-half canvas: the same reference-derived map serves both halves,
      // distinguished by the positional table.
      h = torch::cat({h, h}, 3);
    }
    h = h + positions[level];
    const auto height = h.size(2);
    const auto width = h.size(3);
    auto tokens = to_tokens(h);
    auto n = norms1[level](tokens);
    tokens = tokens + attns[level](n, n);
    tokens = tokens + ffs[level](norms2[level](tokens));
    h = from_tokens(tokens, height, width);
    out.push_back(h);
  }
  return out;
}

SpatialRefinementImpl::SpatialRefinementImpl(const SrmConfig& cfg) : config(cfg) {
  if (cfg.image_height % 16 != 0 || cfg.image_width % 16 != 0) {
    throw std::invalid_argument("spatial module: image size must be divisible by 16");
  }
  pyramid = register_module("pyramid", PyramidEncoder(cfg.dim));
  query_embed = register_parameter("query_embed", torch::randn({cfg.num_queries, cfg.dim}) * 0.02);
  for (int64_t i = 0; i < cfg.units; ++i) {
    units.push_back(register_module("unit" + std::to_string(i), TaskFormerUnit(cfg.dim, cfg.heads)));
  }
  heads = register_module("heads", ProjectionHeads(cfg.dim, cfg.num_queries));
  decoder = register_module("decoder", SrmDecoder(cfg));
}

FeaturePyramid SpatialRefinementImpl::extract_pyramid(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(2) % 16 != 0 || image.size(3) % 16 != 0) {
    throw std::invalid_argument("extract_pyramid: expected B x 3 x H x W with H, W divisible by 16");
  }
  return pyramid(image);
}

SrmOutput SpatialRefinementImpl::forward(const torch::Tensor& image, const torch::Tensor& semantic) {
  const auto pyr = extract_pyramid(image);
  const auto b = image.size(0);
  const auto k = config.num_queries;
  UnitMasks masks{torch::ones({b, k, semantic.size(1)}, image.options()),
                  torch::ones({b, k, pyr.h1.size(2), pyr.h1.size(3)}, image.options())};
  auto queries = query_embed.unsqueeze(0).expand({b, k, config.dim});
  SrmOutput out;
  for (auto& unit : units) {
    queries = unit(queries, semantic, pyr, masks);
    masks = heads->project_masks(queries, semantic, pyr.h1);
    out.unit_masks.push_back(masks);
  }
  out.task = heads->project_task(queries, pyr.h1);
  out.features = decoder(out.task.all());
  return out;
}

}  // namespace twgtm
