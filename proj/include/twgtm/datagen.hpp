#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "twgtm/common.hpp"

namespace twgtm {

/// Flat-canvas to person-canvas placement of a garment:
///   p = A * (q - flat_anchor) + body_anchor
/// with A = [[1, 0], [shear, 1]] * diag(scale_x, scale_y), coordinates in
/// pixels measured at pixel centres.
struct GarmentWarp {
  double scale_x = 1.0;
  double scale_y = 1.0;
  double shear = 0.0;
  std::array<double, 2> flat_anchor{0.0, 0.0};
  std::array<double, 2> body_anchor{0.0, 0.0};
};

/// Nearest-neighbour inverse mapping of a flat-canvas tensor (Cx H x W) into
/// person space. Pixels whose preimage falls outside the flat canvas get
/// `fill`. Applying it to the flat mask reproduces the person mask exactly.
torch::Tensor apply_warp(const GarmentWarp& warp, const torch::Tensor& flat, float fill = 0.0f);

enum class TexturePattern { kSolid, kStripe, kChecker };

struct SampleTriple {
  torch::Tensor person_image;   // 3xHxW in [-1, 1]
  torch::Tensor garment_image;  // 3xHxW in [-1, 1]
  torch::Tensor person_mask;    // 1xHxW in {0, 1}
  torch::Tensor flat_mask;      // 1xHxW in {0, 1}
  Category category = Category::kUpper;
  std::uint64_t seed = 0;
  GarmentWarp warp;
  TexturePattern pattern = TexturePattern::kSolid;
};

/// Background colour of every flat-garment canvas, as an RGB value in [-1, 1].
std::array<float, 3> flat_background();

/// Converts HxWx3 uint8 to 3xHxW float in [-1, 1] (same map as the PNG reader).
torch::Tensor u8_to_image(const torch::Tensor& hwc);

/// Deterministic synthetic triple. height/width must be divisible by
/// `factor` (the codec downscale).
SampleTriple generate_sample(std::uint64_t seed, Category category, int height, int width,
                             int factor = 4);

struct ManifestEntry {
  int index = 0;
  std::string split;  // "train" | "test"
  Category category = Category::kUpper;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  int height = 0;
  int width = 0;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
};

/// index % 10 == 9 goes to the test split.
std::string split_for_index(int index);

/// Per-sample seed and category used by generate_dataset.
std::uint64_t sample_seed(std::uint64_t dataset_seed, int index);
Category sample_category(int index);

DatasetManifest generate_dataset(int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                                 int height = 64, int width = 48);

DatasetManifest read_manifest(const std::filesystem::path& root);

/// Loads the samples of `split` ("train", "test" or "all") from disk.
std::vector<SampleTriple> load_split(const std::filesystem::path& root, const std::string& split);

}  // namespace twgtm
