#include "twgtm/losses.hpp"

#include <stdexcept>

namespace twgtm {

torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw std::invalid_argument("dice_loss: shape mismatch");
  auto p = pred.dim() >= 4 ? pred.flatten(1) : pred.reshape({1, -1});
  auto g = target.dim() >= 4 ? target.flatten(1) : target.reshape({1, -1});
  auto inter = (p * g).sum(1);
  auto denom = p.sum(1) + g.sum(1) + kDiceSmooth;
  // Both empty counts as a perfect match.
  auto score = torch::where(denom <= kDiceSmooth, torch::ones_like(denom), 2.0 * inter / denom);
  return (1.0 - score).mean();
}

torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw std::invalid_argument("bce_loss: shape mismatch");
  auto p = pred.clamp(kBceClamp, 1.0 - kBceClamp);
  return -(target * torch::log(p) + (1.0 - target) * torch::log(1.0 - p)).mean();
}

torch::Tensor mask_loss(const torch::Tensor& pred, const torch::Tensor& target, const MaskLossWeights& weights) {
  return weights.dice * dice_loss(pred, target) + weights.bce * bce_loss(pred, target);
}

}  // namespace twgtm
