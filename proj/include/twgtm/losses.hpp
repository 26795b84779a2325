#pragma once

#include <torch/torch.h>

namespace twgtm {

inline constexpr double kDiceSmooth = 1e-6;
inline constexpr double kBceClamp = 1e-7;

/// 1 - 2 sum(p g) / (sum p + sum g + eps), averaged over the batch when the
/// input is batched (B x ...).
torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& target);

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& target);

struct MaskLossWeights {
  double dice = 0.9;
  double bce = 0.1;
};

/// weights.dice * dice + weights.bce * bce.
torch::Tensor mask_loss(const torch::Tensor& pred, const torch::Tensor& target, const MaskLossWeights& weights = {});

}  // namespace twgtm
