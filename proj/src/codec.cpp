#include "twgtm/codec.hpp"

#include <stdexcept>
#include <string>

namespace twgtm {

namespace F = torch::nn::functional;

Codec::Codec(int factor, double scale, double shift) : factor_(factor), scale_(scale), shift_(shift) {
  if (factor < 1) throw std::invalid_argument("Codec: factor must be >= 1");
  if (scale == 0.0) throw std::invalid_argument("Codec: scale must be non-zero");
}

LatentGrid Codec::encode(const torch::Tensor& image) const {
  auto x = image.dim() == 3 ? image.unsqueeze(0) : image;
  if (x.dim() != 4 || x.size(1) != 3) throw std::invalid_argument("Codec::encode: expected (B)x3xHxW image");
  if (x.size(2) % factor_ != 0 || x.size(3) % factor_ != 0) {
    throw std::invalid_argument("Codec::encode: " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                                " not divisible by factor " + std::to_string(factor_));
  }
  auto z = F::pixel_unshuffle(x, F::PixelUnshuffleFuncOptions(factor_));
  if (scale_ != 1.0 || shift_ != 0.0) z = z * scale_ + shift_;
  return {z, factor_};
}

torch::Tensor Codec::decode(const LatentGrid& latent) const {
  const auto& z = latent.data;
  if (z.dim() != 4 || z.size(1) != latent_channels() || latent.factor != factor_) {
    throw std::invalid_argument("Codec::decode: expected " + std::to_string(latent_channels()) +
                                " latent channels, got " + std::to_string(z.dim() == 4 ? z.size(1) : -1));
  }
  auto v = (scale_ != 1.0 || shift_ != 0.0) ? (z - shift_) / scale_ : z;
  return F::pixel_shuffle(v, F::PixelShuffleFuncOptions(factor_));
}

}  // namespace twgtm
