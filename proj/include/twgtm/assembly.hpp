#pragma once

#include <cstdint>
#include <optional>

#include <torch/torch.h>

#include "twgtm/common.hpp"
#include "twgtm/datagen.hpp"

namespace twgtm {

// Canvas construction for both transfer directions.
//
// Mask convention everywhere: 1 = keep (known), 0 = generate.
// The half being generated always sits on the LEFT of the canvas:
//   VTON  canvas = [person  | garment]
//   VTOFF canvas = [garment | person]
// All functions accept unbatched (C x H x W) or batched (B x C x H x W)
// tensors; halves are split along the last axis.

/// Which image occupies each half of a canvas.
struct CanvasLayout {
  enum class Side { kPerson, kGarment };
  Side left = Side::kPerson;
  Side right = Side::kGarment;

  static CanvasLayout for_task(Task task);
  Side generated() const { return left; }
  Side reference() const { return right; }
};

struct AssembledInput {
  torch::Tensor tensor;  // B x (2c+1) x h x 2w: [noised target | guidance | mask]
  Task task = Task::kVton;
  Stage stage = Stage::kStage1;
  std::int64_t timestep = 0;
  CanvasLayout layout;
};

/// How VTOFF inference fills the generated half of the mask channel when no
/// box is given. kGeneratedHalfZero sets it to 0 (generate everything);
/// kLiteral applies zeros(M) inside 1 - M, which makes the half all ones.
enum class ZeroMaskMode { kGeneratedHalfZero, kLiteral };

torch::Tensor concat_halves(const torch::Tensor& left, const torch::Tensor& right);
torch::Tensor swap_halves(const torch::Tensor& canvas);
torch::Tensor left_half(const torch::Tensor& canvas);
torch::Tensor right_half(const torch::Tensor& canvas);

/// h_i: VTON -> [x | c], VTOFF -> [c | x].
torch::Tensor build_target(const torch::Tensor& person, const torch::Tensor& garment, Task task);

/// x_a = (1 - M) * x. With `strict`, M must be exactly binary.
torch::Tensor build_agnostic(const torch::Tensor& person, const torch::Tensor& mask, bool strict = true);

/// h_f: VTON -> [(1 - M) * x | c], VTOFF -> [(1 - M) * c | x].
torch::Tensor build_guidance(const torch::Tensor& person, const torch::Tensor& garment,
                             const torch::Tensor& effective_mask, Task task, bool strict = true);

/// h_m: [1 - M_eff | ones] (generated half on the left for both tasks).
torch::Tensor build_mask_channel(const torch::Tensor& effective_mask, Task task);

/// Area-averages an H x W mask down to latent resolution.
torch::Tensor resize_mask(const torch::Tensor& mask_channel, int factor);

/// Seeded square augmentation: closing (dilate then erode, same seeded radius), tight
/// bounding rectangle, then a per-side margin drawn in [0, max_margin] of the
/// rectangle extent, clipped to the frame. An empty mask yields the full frame.
torch::Tensor augment_square(const torch::Tensor& mask, std::uint64_t seed, double max_margin = 0.15);

/// Tight filled bounding rectangle of the mask's support. Throws on empty masks.
torch::Tensor mask_to_bbox(const torch::Tensor& mask);

/// Filled rectangle mask [x0, x1) x [y0, y1) on a 1 x H x W frame.
torch::Tensor rectangle_mask(int height, int width, int x0, int y0, int x1, int y1);

/// Mask used during training for the given task and stage.
torch::Tensor select_training_mask(const SampleTriple& sample, Task task, Stage stage, std::uint64_t seed);

/// [noised target latent, guidance latent, resized mask channel] along channels.
AssembledInput assemble(const torch::Tensor& noised_target, const torch::Tensor& guidance_latent,
                        const torch::Tensor& mask_latent, Task task, Stage stage, std::int64_t timestep);

/// Generated (left) half of a decoded canvas; identical rule for both tasks.
torch::Tensor crop_result(const torch::Tensor& canvas, Task task);

/// VTOFF inference conditioning canvases. With a box, generation is confined
/// to it and the rest of the garment half is the flat background colour.
struct InferenceCanvases {
  torch::Tensor guidance;      // 3 x H x 2W
  torch::Tensor mask_channel;  // 1 x H x 2W
};
InferenceCanvases vtoff_inference_canvases(const torch::Tensor& person, const std::optional<torch::Tensor>& box,
                                           ZeroMaskMode mode = ZeroMaskMode::kGeneratedHalfZero);
InferenceCanvases vton_inference_canvases(const torch::Tensor& person, const torch::Tensor& mask,
                                          const torch::Tensor& garment);

}  // namespace twgtm
