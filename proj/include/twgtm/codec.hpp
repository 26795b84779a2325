#pragma once

#include <torch/torch.h>

namespace twgtm {

/// Latent tensor produced by Codec::encode, always batched: B x c x h x w.
struct LatentGrid {
  torch::Tensor data;
  int factor = 4;

  int64_t channels() const { return data.size(1); }
};

/// Lossless stand-in for a VAE: space-to-depth by `factor` followed by the
/// value map (v * scale + shift). With the default identity map the round
/// trip is bit-exact.
class Codec {
 public:
  explicit Codec(int factor = 4, double scale = 1.0, double shift = 0.0);

  int factor() const { return factor_; }
  int64_t latent_channels() const { return 3LL * factor_ * factor_; }

  /// Accepts 3xHxW or Bx3xHxW.
  LatentGrid encode(const torch::Tensor& image) const;
  /// Returns Bx3xHxW.
  torch::Tensor decode(const LatentGrid& latent) const;
  torch::Tensor decode(const torch::Tensor& latent) const { return decode(LatentGrid{latent, factor_}); }

 private:
  int factor_;
  double scale_;
  double shift_;
};

}  // namespace twgtm
