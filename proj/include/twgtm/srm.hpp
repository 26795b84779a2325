#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "twgtm/attention.hpp"

namespace twgtm {

struct SrmConfig {
  int64_t image_height = 64;
  int64_t image_width = 48;
  int64_t dim = 128;          // D, equal to the semantic module width
  int64_t num_queries = 16;   // K
  int64_t units = 3;
  int64_t heads = 4;
  /// Output widths, one per denoiser attention level.
  std::array<int64_t, 3> out_channels{64, 128, 256};
  /// Latent grid of the denoiser at its first level (h, w). With the
  /// two-half canvas w is twice the per-image latent width.
  int64_t latent_height = 16;
  int64_t latent_width = 24;
};

struct FeaturePyramid {
  torch::Tensor h1;  // B x D x H/4 x W/4
  torch::Tensor h2;  // B x D x H/8 x W/8
  torch::Tensor h3;  // B x D x H/16 x W/16
};

struct UnitMasks {
  torch::Tensor query_mask;    // M1: B x K x N
  torch::Tensor spatial_mask;  // M2: B x K x H/4 x W/4
};

struct TaskProjection {
  torch::Tensor garment_mask;  // TFQ0: B x 1 x H/4 x W/4 in (0,1)
  torch::Tensor rest;          // TFQ_j: B x (K-1) x H/4 x W/4
  torch::Tensor all() const { return torch::cat({garment_mask, rest}, 1); }
};

struct SrmOutput {
  std::vector<torch::Tensor> features;  // three maps at the denoiser attention resolutions
  TaskProjection task;
  std::vector<UnitMasks> unit_masks;    // one entry per unit
};

/// Hierarchical convolutional encoder producing 1/4, 1/8, 1/16 maps of width D.
struct PyramidEncoderImpl : torch::nn::Module {
  PyramidEncoderImpl(int64_t dim);
  FeaturePyramid forward(const torch::Tensor& image);

  torch::nn::Sequential stem{nullptr}, down2{nullptr}, down3{nullptr};
  torch::nn::Conv2d proj1{nullptr}, proj2{nullptr}, proj3{nullptr};
};
TORCH_MODULE(PyramidEncoder);

/// One cascade unit: three decoder blocks attending to the semantic queries,
/// the 1/8 map and the 1/16 map under the previous unit's masks.
struct TaskFormerUnitImpl : torch::nn::Module {
  TaskFormerUnitImpl(int64_t dim, int64_t heads);

  torch::Tensor forward(const torch::Tensor& queries, const torch::Tensor& semantic, const FeaturePyramid& pyramid,
                        const UnitMasks& previous);

  DecoderBlock block1{nullptr}, block2{nullptr}, block3{nullptr};
};
TORCH_MODULE(TaskFormerUnit);

/// Mask-space and task-space projection heads.
struct ProjectionHeadsImpl : torch::nn::Module {
  ProjectionHeadsImpl(int64_t dim, int64_t num_queries);

  UnitMasks project_masks(const torch::Tensor& queries, const torch::Tensor& semantic, const torch::Tensor& h1);
  TaskProjection project_task(const torch::Tensor& queries, const torch::Tensor& h1);

  /// Parameters of the first-query garment-mask head.
  std::vector<torch::Tensor> garment_head_parameters();

  int64_t num_queries;
  torch::nn::Linear query_linear{nullptr};
  Mlp mask_mlp{nullptr};
  Mlp task_mlp0{nullptr};
  // Per-query two-layer MLPs for queries 1..K-1, stored batched.
  torch::Tensor task_w1, task_b1, task_w2, task_b2;
};
TORCH_MODULE(ProjectionHeads);

/// Maps task-space maps to the denoiser's three attention grids.
struct SrmDecoderImpl : torch::nn::Module {
  explicit SrmDecoderImpl(const SrmConfig& config);
  std::vector<torch::Tensor> forward(const torch::Tensor& task_maps);

  SrmConfig config;
  std::vector<torch::nn::Conv2d> convs;
  std::vector<torch::Tensor> positions;
  std::vector<torch::nn::LayerNorm> norms1, norms2;
  std::vector<MultiHeadAttention> attns;
  std::vector<FeedForward> ffs;
};
TORCH_MODULE(SrmDecoder);

struct SpatialRefinementImpl : torch::nn::Module {
  explicit SpatialRefinementImpl(const SrmConfig& config);

  FeaturePyramid extract_pyramid(const torch::Tensor& image);
  /// Runs every unit from all-ones masks, re-projecting masks after each unit.
  SrmOutput forward(const torch::Tensor& image, const torch::Tensor& semantic);

  SrmConfig config;
  PyramidEncoder pyramid{nullptr};
  torch::Tensor query_embed;  // K x D, the unit-0 query features
  std::vector<TaskFormerUnit> units;
  ProjectionHeads heads{nullptr};
  SrmDecoder decoder{nullptr};
};
TORCH_MODULE(SpatialRefinement);

/// Area-averages a B x K x H x W mask by an integer factor and flattens it
/// to B x K x (H*W / factor^2).
torch::Tensor pool_mask_to_keys(const torch::Tensor& spatial_mask, int64_t factor);

}  // namespace twgtm
