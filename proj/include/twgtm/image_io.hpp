#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace twgtm {

// 8-bit lossless PNG I/O. RGB images live in [-1, 1] in memory and map to
// round((v + 1) * 127.5); masks live in [0, 1] and map to round(255 * v).

void write_image_png(const std::filesystem::path& path, const torch::Tensor& image);
void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask);

torch::Tensor read_image_png(const std::filesystem::path& path);
torch::Tensor read_mask_png(const std::filesystem::path& path);

/// Lays images (3xHxW in [-1,1]) or masks (1xHxW in [0,1]) side by side in
/// one RGB strip with a 2-pixel separator. Heights must agree.
torch::Tensor horizontal_strip(const std::vector<torch::Tensor>& panels);

}  // namespace twgtm
