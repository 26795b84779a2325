#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "json.hpp"
#include "twgtm/codec.hpp"
#include "twgtm/common.hpp"
#include "twgtm/denoiser.hpp"
#include "twgtm/diffusion.hpp"
#include "twgtm/sam.hpp"
#include "twgtm/srm.hpp"

namespace twgtm {

struct ModelConfig {
  int64_t image_height = 64;
  int64_t image_width = 48;
  int codec_factor = 4;
  /// false: single-half canvas (target only), the reference enters only
  /// through the semantic and spatial modules.
  bool spatial_concat = true;
  /// false: the spatial branch never feeds the denoiser, in any stage.
  bool extended_attention = true;
  bool native_crossattn = true;
  int64_t dim = 128;
  int64_t semantic_queries = 8;
  int64_t prompt_tokens = 4;
  int64_t qformer_depth = 2;
  int64_t task_queries = 16;
  int64_t taskformer_units = 3;
  int64_t heads = 4;
  std::array<int64_t, 3> unet_widths{64, 128, 256};
  int64_t res_blocks = 2;
  int64_t num_timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  int64_t latent_channels() const { return 3LL * codec_factor * codec_factor; }
  int64_t input_channels() const { return 2 * latent_channels() + 1; }
  int64_t canvas_width() const { return spatial_concat ? 2 * image_width : image_width; }
  int64_t latent_height() const { return image_height / codec_factor; }
  int64_t latent_width() const { return canvas_width() / codec_factor; }

  SamConfig sam() const;
  SrmConfig srm() const;
  DenoiserConfig denoiser() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct Conditioning {
  SemanticTokens semantic;
  std::optional<SrmOutput> spatial;
};

/// Complete two-way transfer network: semantic module, spatial module and
/// denoiser, plus the codec and noise schedule they share.
struct TwgtmModelImpl : torch::nn::Module {
  explicit TwgtmModelImpl(const ModelConfig& config);

  /// reference: B x 3 x H x W; categories: int64 B. The spatial module runs
  /// when `with_spatial` is set.
  Conditioning condition(const torch::Tensor& reference, const torch::Tensor& categories, bool with_spatial);

  torch::Tensor predict_noise(const torch::Tensor& input, const torch::Tensor& timesteps,
                              const Conditioning& conditioning);

  /// Stage 1 runs without the spatial branch; stage 2 and inference after
  /// stage 2 run with it (when the config allows it).
  void set_stage(Stage stage);
  bool spatial_branch_active() const { return unet->extended_attention_active(); }

  /// Parameters that receive gradient in the given stage.
  std::vector<torch::Tensor> trainable_parameters(Stage stage);

  ModelConfig config;
  Codec codec;
  NoiseSchedule schedule;
  SemanticAbstraction sam{nullptr};
  SpatialRefinement srm{nullptr};
  Denoiser unet{nullptr};
};
TORCH_MODULE(TwgtmModel);

/// Checkpoint container (little-endian):
///   "TWGTMCK1" | u64 meta_len | meta JSON | u64 count |
///   count x { u32 name_len | name | u8 dtype (0 f32, 1 f64) | u32 ndim | i64 dims[ndim] | raw data }
/// The meta JSON holds {"model": ModelConfig, "stage": int, "step": int, ...}.
struct CheckpointMeta {
  ModelConfig model;
  int stage = 1;
  int64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, TwgtmModel& model, const CheckpointMeta& meta);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);
/// Loads tensors into an existing model; names and shapes must match.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, TwgtmModel& model);
/// Builds a model from the checkpoint's own config and loads it.
std::pair<TwgtmModel, CheckpointMeta> open_checkpoint(const std::filesystem::path& path);

}  // namespace twgtm
