#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "twgtm/datagen.hpp"
#include "twgtm/image_io.hpp"

using namespace twgtm;
namespace fs = std::filesystem;

namespace {

bool is_binary(const torch::Tensor& m) { return ((m == 0) | (m == 1)).all().item<bool>(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("twgtm_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Datagen, DeterministicPerSeed) {
  const auto a = generate_sample(7, Category::kUpper, 64, 48);
  const auto b = generate_sample(7, Category::kUpper, 64, 48);
  EXPECT_TRUE(torch::equal(a.person_image, b.person_image));
  EXPECT_TRUE(torch::equal(a.garment_image, b.garment_image));
  EXPECT_TRUE(torch::equal(a.person_mask, b.person_mask));
  EXPECT_TRUE(torch::equal(a.flat_mask, b.flat_mask));
  const auto c = generate_sample(8, Category::kUpper, 64, 48);
  EXPECT_FALSE(torch::equal(a.garment_image, c.garment_image));
}

TEST(Datagen, InvariantsHoldOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto cat = static_cast<Category>(seed % 3);
    const auto s = generate_sample(seed, cat, 64, 48);
    ASSERT_EQ(s.person_image.sizes(), (std::vector<int64_t>{3, 64, 48}));
    ASSERT_EQ(s.flat_mask.sizes(), (std::vector<int64_t>{1, 64, 48}));
    ASSERT_TRUE(is_binary(s.person_mask));
    ASSERT_TRUE(is_binary(s.flat_mask));
    const double m = s.person_mask.mean().item<double>();
    const double mc = s.flat_mask.mean().item<double>();
    ASSERT_GE(m, 0.05) << "seed " << seed;
    ASSERT_LE(m, 0.6) << "seed " << seed;
    ASSERT_GE(mc, 0.05) << "seed " << seed;
    ASSERT_LE(mc, 0.6) << "seed " << seed;
    ASSERT_GE(s.person_image.min().item<float>(), -1.0f);
    ASSERT_LE(s.person_image.max().item<float>(), 1.0f);
    ASSERT_GE(s.garment_image.min().item<float>(), -1.0f);
    ASSERT_LE(s.garment_image.max().item<float>(), 1.0f);
  }
}

TEST(Datagen, WarpReproducesPersonMaskExactly) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto s = generate_sample(seed, static_cast<Category>(seed % 3), 64, 48);
    EXPECT_TRUE(torch::equal(apply_warp(s.warp, s.flat_mask, 0.0f), s.person_mask)) << "seed " << seed;
    // Inside M the person pixels are exactly the warped garment pixels.
    auto warped = apply_warp(s.warp, s.garment_image, 0.0f);
    EXPECT_TRUE(torch::equal(warped * s.person_mask, s.person_image * s.person_mask)) << "seed " << seed;
  }
}

TEST(Datagen, WornAndFlatColorsAgree) {
  const auto s = generate_sample(7, Category::kUpper, 64, 48);
  for (int ch = 0; ch < 3; ++ch) {
    const double worn = (s.person_image[ch] * s.person_mask[0]).sum().item<double>() / s.person_mask.sum().item<double>();
    const double flat = (s.garment_image[ch] * s.flat_mask[0]).sum().item<double>() / s.flat_mask.sum().item<double>();
    EXPECT_NEAR(worn, flat, 0.1) << "channel " << ch;
  }
}

TEST(Datagen, UniformBackgrounds) {
  const auto s = generate_sample(11, Category::kDress, 64, 48);
  const auto bg = flat_background();
  auto outside = (1 - s.flat_mask[0]).to(torch::kBool);
  for (int ch = 0; ch < 3; ++ch) {
    EXPECT_TRUE((s.garment_image[ch].masked_select(outside) == bg[static_cast<std::size_t>(ch)]).all().item<bool>());
  }
}

TEST(Datagen, Rejections) {
  EXPECT_THROW(generate_sample(1, Category::kUpper, 62, 48), std::invalid_argument);
  EXPECT_THROW(generate_sample(1, static_cast<Category>(5), 64, 48), std::invalid_argument);
  EXPECT_THROW(generate_dataset(0, 1, scratch("zero")), std::invalid_argument);
}

TEST(Datagen, SplitRule) {
  int train = 0, test = 0;
  for (int i = 0; i < 10; ++i) (split_for_index(i) == "test" ? test : train)++;
  EXPECT_EQ(train, 9);
  EXPECT_EQ(test, 1);
}

TEST(Datagen, DatasetFilesRoundTripAndRegenerateIdentically) {
  const auto a = scratch("ds_a");
  const auto b = scratch("ds_b");
  const auto manifest = generate_dataset(10, 3, a);
  generate_dataset(10, 3, b);
  ASSERT_EQ(manifest.entries.size(), 10u);
  EXPECT_EQ(read_manifest(a).entries.size(), 10u);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  for (const auto& kind : {"person", "garment", "person_mask", "flat_mask"}) {
    EXPECT_EQ(slurp(a / "train" / kind / "0.png"), slurp(b / "train" / kind / "0.png"));
    EXPECT_TRUE(fs::exists(a / "test" / kind / "9.png"));
  }
  const auto train = load_split(a, "train");
  const auto test = load_split(a, "test");
  EXPECT_EQ(train.size(), 9u);
  EXPECT_EQ(test.size(), 1u);
  const auto direct = generate_sample(sample_seed(3, 9), sample_category(9), 64, 48);
  EXPECT_TRUE(torch::equal(test[0].person_image, direct.person_image));
  EXPECT_TRUE(torch::equal(test[0].flat_mask, direct.flat_mask));
  EXPECT_DOUBLE_EQ(test[0].warp.shear, direct.warp.shear);
  EXPECT_THROW(load_split(a, "val"), std::invalid_argument);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(ImageIo, PngRoundTrip) {
  const auto dir = scratch("png");
  fs::create_directories(dir);
  const auto s = generate_sample(2, Category::kLower, 64, 48);
  write_image_png(dir / "p.png", s.person_image);
  write_mask_png(dir / "m.png", s.person_mask);
  EXPECT_TRUE(torch::equal(read_image_png(dir / "p.png"), s.person_image));
  EXPECT_TRUE(torch::equal(read_mask_png(dir / "m.png"), s.person_mask));
  EXPECT_THROW(read_image_png(dir / "missing.png"), std::runtime_error);
  fs::remove_all(dir);
}
