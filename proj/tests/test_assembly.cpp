#include <gtest/gtest.h>

#include <cmath>

#include "twgtm/assembly.hpp"
#include "twgtm/codec.hpp"
#include "twgtm/datagen.hpp"

using namespace twgtm;
using torch::indexing::Slice;

namespace {

SampleTriple sample(std::uint64_t seed) { return generate_sample(seed, static_cast<Category>(seed % 3), 64, 48); }

torch::Tensor input_for(const SampleTriple& s, Task task, Stage stage, const torch::Tensor& noise) {
  Codec codec(4);
  const auto m = select_training_mask(s, task, stage, 0);
  auto z = codec.encode(build_target(s.person_image, s.garment_image, task)).data;
  auto g = codec.encode(build_guidance(s.person_image, s.garment_image, m, task)).data;
  auto h = resize_mask(build_mask_channel(m, task), 4).unsqueeze(0);
  return assemble(z + noise, g, h, task, stage, 10).tensor;
}

}  // namespace

TEST(Assembly, TargetLayoutAndSwap) {
  const auto s = sample(1);
  auto vton = build_target(s.person_image, s.garment_image, Task::kVton);
  auto vtoff = build_target(s.person_image, s.garment_image, Task::kVtoff);
  EXPECT_EQ(vton.sizes(), (std::vector<int64_t>{3, 64, 96}));
  EXPECT_TRUE(torch::equal(left_half(vton), s.person_image));
  EXPECT_TRUE(torch::equal(vtoff, swap_halves(vton)));
  EXPECT_TRUE(torch::equal(crop_result(vton, Task::kVton), s.person_image));
  EXPECT_TRUE(torch::equal(crop_result(vtoff, Task::kVtoff), s.garment_image));
  EXPECT_TRUE(torch::equal(swap_halves(swap_halves(vton)), vton));
  EXPECT_THROW(build_target(s.person_image, torch::zeros({3, 64, 40}), Task::kVton), std::invalid_argument);
  EXPECT_THROW(crop_result(torch::zeros({3, 64, 95}), Task::kVton), std::invalid_argument);
}

TEST(Assembly, Agnostic) {
  const auto s = sample(2);
  auto zeros = torch::zeros({1, 64, 48});
  EXPECT_TRUE(torch::equal(build_agnostic(s.person_image, zeros), s.person_image));
  EXPECT_TRUE(torch::equal(build_agnostic(s.person_image, torch::ones({1, 64, 48})), torch::zeros({3, 64, 48})));
  auto xa = build_agnostic(s.person_image, s.person_mask);
  EXPECT_LE(xa.abs().mean().item<double>(), s.person_image.abs().mean().item<double>());
  EXPECT_THROW(build_agnostic(s.person_image, zeros + 0.5), std::invalid_argument);
  EXPECT_NO_THROW(build_agnostic(s.person_image, zeros + 0.5, /*strict=*/false));
}

TEST(Assembly, GuidanceCases) {
  const auto s = sample(3);
  auto zeros = torch::zeros({1, 64, 48});
  EXPECT_TRUE(torch::equal(build_guidance(s.person_image, s.garment_image, zeros, Task::kVton),
                           build_target(s.person_image, s.garment_image, Task::kVton)));
  // Stage-1 VTOFF: the whole silhouette is removed, only background survives.
  auto g = build_guidance(s.person_image, s.garment_image, s.flat_mask, Task::kVtoff);
  const auto bg = flat_background();
  auto garment_half = left_half(g);
  for (int ch = 0; ch < 3; ++ch) {
    auto kept = garment_half[ch].masked_select(s.flat_mask[0] == 0);
    EXPECT_TRUE((kept == bg[static_cast<std::size_t>(ch)]).all().item<bool>());
    EXPECT_TRUE((garment_half[ch].masked_select(s.flat_mask[0] == 1) == 0).all().item<bool>());
  }
  EXPECT_TRUE(torch::equal(right_half(g), s.person_image));
  EXPECT_TRUE(torch::equal(right_half(build_guidance(s.person_image, s.garment_image, s.person_mask, Task::kVton)),
                           s.garment_image));
}

TEST(Assembly, MaskChannel) {
  auto m = torch::zeros({1, 10, 10});
  m.index_put_({0, Slice(0, 3), Slice()}, 1.0);  // 30 %
  auto h = build_mask_channel(m, Task::kVton);
  EXPECT_EQ(h.sizes(), (std::vector<int64_t>{1, 10, 20}));
  EXPECT_NEAR(left_half(h).mean().item<double>(), 0.7, 1e-7);
  EXPECT_EQ(right_half(h).mean().item<double>(), 1.0);
  EXPECT_TRUE(torch::equal(build_mask_channel(m, Task::kVtoff), h));
  EXPECT_THROW(build_mask_channel(m * 2, Task::kVton), std::invalid_argument);
}

TEST(Assembly, ResizeIsAreaAverage) {
  auto h = torch::zeros({1, 4, 8});
  h.index_put_({0, Slice(0, 4), Slice(0, 2)}, 1.0);  // half of the first 4x4 cell
  auto r = resize_mask(h, 4);
  EXPECT_EQ(r.sizes(), (std::vector<int64_t>{1, 1, 2}));
  EXPECT_DOUBLE_EQ(r[0][0][0].item<double>(), 0.5);
  EXPECT_DOUBLE_EQ(r[0][0][1].item<double>(), 0.0);
}

TEST(Assembly, ChannelLawAndOrder) {
  for (int f : {2, 4, 8}) {
    Codec codec(f);
    const auto c = codec.latent_channels();
    auto z = torch::zeros({2, c, 64 / f, 96 / f});
    auto m = torch::zeros({2, 1, 64 / f, 96 / f});
    auto in = assemble(z, z + 1, m + 0.5, Task::kVton, Stage::kStage1, 3);
    EXPECT_EQ(in.tensor.size(1), 2 * c + 1);
    EXPECT_TRUE((in.tensor.narrow(1, c, c) == 1).all().item<bool>());
    EXPECT_TRUE((in.tensor.narrow(1, 2 * c, 1) == 0.5).all().item<bool>());
  }
  // A four-channel latent gives 4 + 4 + 1 channels.
  auto z4 = torch::zeros({1, 4, 8, 12});
  EXPECT_EQ(assemble(z4, z4, torch::zeros({1, 1, 8, 12}), Task::kVtoff, Stage::kInference, 1).tensor.size(1), 9);
  EXPECT_THROW(assemble(z4, torch::zeros({1, 4, 8, 10}), torch::zeros({1, 1, 8, 12}), Task::kVton, Stage::kStage1, 1),
               std::invalid_argument);
  EXPECT_THROW(assemble(z4, z4, torch::zeros({1, 1, 4, 6}), Task::kVton, Stage::kStage1, 1), std::invalid_argument);
  EXPECT_EQ(CanvasLayout::for_task(Task::kVtoff).generated(), CanvasLayout::Side::kGarment);
  EXPECT_EQ(CanvasLayout::for_task(Task::kVton).generated(), CanvasLayout::Side::kPerson);
}

TEST(Assembly, TaskSymmetryUnderSwapAndRoleExchange) {
  // VTOFF on (x, c) with mask M_c equals VTON on (c, x) with the same mask:
  // the generated half moves to the garment, the reference half to the person.
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = sample(seed);
    SampleTriple exchanged = s;
    exchanged.person_image = s.garment_image;
    exchanged.garment_image = s.person_image;
    exchanged.person_mask = s.flat_mask;
    exchanged.flat_mask = s.person_mask;
    auto noise = torch::randn({1, 48, 16, 24});
    auto vtoff = input_for(s, Task::kVtoff, Stage::kStage1, noise);
    auto vton = input_for(exchanged, Task::kVton, Stage::kStage1, noise);
    ASSERT_TRUE(torch::equal(vtoff, vton)) << "seed " << seed;
    // The same relation read with halves: the VTOFF target is the swapped VTON target.
    ASSERT_TRUE(torch::equal(build_target(s.person_image, s.garment_image, Task::kVtoff),
                             swap_halves(build_target(s.person_image, s.garment_image, Task::kVton))));
  }
}

TEST(Assembly, KnownRegionMatchesCleanTarget) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = sample(seed);
    for (auto task : {Task::kVton, Task::kVtoff}) {
      const auto m = select_training_mask(s, task, Stage::kStage2, seed);
      auto target = build_target(s.person_image, s.garment_image, task);
      auto guidance = build_guidance(s.person_image, s.garment_image, m, task);
      auto keep = build_mask_channel(m, task) == 1;
      EXPECT_TRUE(torch::equal(target.masked_select(keep.expand_as(target)), guidance.masked_select(keep.expand_as(target))));
    }
  }
}

TEST(Assembly, TrainingMaskSelection) {
  const auto s = sample(4);
  EXPECT_TRUE(torch::equal(select_training_mask(s, Task::kVton, Stage::kStage1, 0), s.person_mask));
  EXPECT_TRUE(torch::equal(select_training_mask(s, Task::kVton, Stage::kStage2, 0), s.person_mask));
  EXPECT_TRUE(torch::equal(select_training_mask(s, Task::kVtoff, Stage::kStage1, 0), s.flat_mask));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto sq = select_training_mask(s, Task::kVtoff, Stage::kStage2, seed);
    EXPECT_TRUE((sq >= s.flat_mask).all().item<bool>());
    EXPECT_TRUE(torch::equal(mask_to_bbox(sq), sq));
  }
  EXPECT_THROW(select_training_mask(s, Task::kVtoff, Stage::kInference, 0), std::invalid_argument);
}

TEST(Assembly, AugmentSquareProperties) {
  auto square = rectangle_mask(40, 40, 15, 15, 25, 25);
  EXPECT_TRUE(torch::equal(augment_square(square, 1, 0.0), square));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = sample(seed);
    auto a = augment_square(s.flat_mask, seed);
    EXPECT_TRUE(torch::equal(a, augment_square(s.flat_mask, seed)));
    EXPECT_TRUE((a >= s.flat_mask).all().item<bool>());
    // Rectangular: every non-empty row of the support is identical.
    auto rows = a[0].sum(1) > 0;
    auto support = a[0].index({rows});
    EXPECT_TRUE((support == support[0]).all().item<bool>());
    // At most 15 % of the extent per side (rounded) beyond the tight box;
    // closing cannot leave the bounding rectangle.
    auto tight = mask_to_bbox(s.flat_mask);
    const double tw = tight[0].amax(0).sum().item<double>();
    const double th = tight[0].amax(1).sum().item<double>();
    EXPECT_LE(a[0].amax(0).sum().item<double>(), tw + 2 * std::round(0.15 * tw));
    EXPECT_LE(a[0].amax(1).sum().item<double>(), th + 2 * std::round(0.15 * th));
  }
  EXPECT_TRUE(torch::equal(augment_square(torch::zeros({1, 8, 8}), 0), torch::ones({1, 8, 8})));
}

TEST(Assembly, BoundingBox) {
  auto m = torch::zeros({1, 10, 12});
  m.index_put_({0, Slice(2, 6), 3}, 1.0);
  m.index_put_({0, 4, Slice(3, 8)}, 1.0);
  auto b = mask_to_bbox(m);
  EXPECT_TRUE(torch::equal(b, rectangle_mask(10, 12, 3, 2, 8, 6)));
  EXPECT_TRUE(torch::equal(mask_to_bbox(b), b));
  EXPECT_GE(b.sum().item<double>(), m.sum().item<double>());
  EXPECT_THROW(mask_to_bbox(torch::zeros({1, 4, 4})), std::invalid_argument);
  EXPECT_THROW(rectangle_mask(4, 4, 2, 0, 2, 4), std::invalid_argument);
}

TEST(Assembly, VtoffInferenceCanvases) {
  const auto s = sample(5);
  auto plain = vtoff_inference_canvases(s.person_image, std::nullopt);
  EXPECT_TRUE((left_half(plain.mask_channel) == 0).all().item<bool>());
  EXPECT_TRUE((right_half(plain.mask_channel) == 1).all().item<bool>());
  EXPECT_TRUE(torch::equal(right_half(plain.guidance), s.person_image));
  auto literal = vtoff_inference_canvases(s.person_image, std::nullopt, ZeroMaskMode::kLiteral);
  EXPECT_TRUE((literal.mask_channel == 1).all().item<bool>());

  auto box = rectangle_mask(64, 48, 8, 4, 40, 44);
  auto boxed = vtoff_inference_canvases(s.person_image, box);
  EXPECT_TRUE(torch::equal(left_half(boxed.mask_channel), 1 - box));
  // Outside the box the garment half carries the flat background, as in training.
  const auto bg = flat_background();
  auto outside = left_half(boxed.guidance)[0].masked_select(box[0] == 0);
  EXPECT_TRUE((outside == bg[0]).all().item<bool>());
}
