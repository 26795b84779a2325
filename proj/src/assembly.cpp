#include "twgtm/assembly.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace twgtm {

namespace F = torch::nn::functional;

namespace {

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void require_same_dims(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

void require_binary(const torch::Tensor& mask, const char* what) {
  const bool binary = torch::logical_or(mask == 0, mask == 1).all().item<bool>();
  if (!binary) throw std::invalid_argument(std::string(what) + ": mask is not binary");
}

torch::Tensor ones_like_half(const torch::Tensor& mask) { return torch::ones_like(mask); }

// (1 x H x W) or (H x W) view of a single mask as H x W.
torch::Tensor as_plane(const torch::Tensor& mask) {
  if (mask.dim() == 2) return mask;
  if (mask.dim() == 3 && mask.size(0) == 1) return mask[0];
  throw std::invalid_argument("expected a 1xHxW mask, got " + shape_str(mask));
}

struct Bounds {
  int y0, y1, x0, x1;  // inclusive
};

std::optional<Bounds> support_bounds(const torch::Tensor& plane) {
  auto nz = torch::nonzero(plane > 0.5);
  if (nz.size(0) == 0) return std::nullopt;
  auto lo = std::get<0>(nz.min(0));
  auto hi = std::get<0>(nz.max(0));
  return Bounds{static_cast<int>(lo[0].item<int64_t>()), static_cast<int>(hi[0].item<int64_t>()),
                static_cast<int>(lo[1].item<int64_t>()), static_cast<int>(hi[1].item<int64_t>())};
}

}  // namespace

CanvasLayout CanvasLayout::for_task(Task task) {
  if (task == Task::kVton) return {Side::kPerson, Side::kGarment};
  return {Side::kGarment, Side::kPerson};
}

torch::Tensor concat_halves(const torch::Tensor& left, const torch::Tensor& right) {
  require_same_dims(left, right, "concat_halves");
  return torch::cat({left, right}, -1);
}

torch::Tensor left_half(const torch::Tensor& canvas) {
  const auto w = canvas.size(-1);
  if (w % 2 != 0) throw std::invalid_argument("canvas width " + std::to_string(w) + " is odd");
  return canvas.narrow(-1, 0, w / 2);
}

torch::Tensor right_half(const torch::Tensor& canvas) {
  const auto w = canvas.size(-1);
  if (w % 2 != 0) throw std::invalid_argument("canvas width " + std::to_string(w) + " is odd");
  return canvas.narrow(-1, w / 2, w / 2);
}

torch::Tensor swap_halves(const torch::Tensor& canvas) { return torch::cat({right_half(canvas), left_half(canvas)}, -1); }

torch::Tensor build_target(const torch::Tensor& person, const torch::Tensor& garment, Task task) {
  require_same_dims(person, garment, "build_target");
  return task == Task::kVton ? concat_halves(person, garment) : concat_halves(garment, person);
}

torch::Tensor build_agnostic(const torch::Tensor& person, const torch::Tensor& mask, bool strict) {
  if (strict) require_binary(mask, "build_agnostic");
  return (1.0 - mask) * person;
}

torch::Tensor build_guidance(const torch::Tensor& person, const torch::Tensor& garment,
                             const torch::Tensor& effective_mask, Task task, bool strict) {
  require_same_dims(person, garment, "build_guidance");
  if (task == Task::kVton) return concat_halves(build_agnostic(person, effective_mask, strict), garment);
  return concat_halves(build_agnostic(garment, effective_mask, strict), person);
}

torch::Tensor build_mask_channel(const torch::Tensor& effective_mask, Task /*task*/) {
  if ((effective_mask < 0).any().item<bool>() || (effective_mask > 1).any().item<bool>()) {
    throw std::invalid_argument("build_mask_channel: mask values outside [0, 1]");
  }
  // The generated half is on the left under both layouts.
  return concat_halves(1.0 - effective_mask, ones_like_half(effective_mask));
}

torch::Tensor resize_mask(const torch::Tensor& mask_channel, int factor) {
  auto m = mask_channel.dim() == 3 ? mask_channel.unsqueeze(0) : mask_channel;
  if (m.size(-1) % factor != 0 || m.size(-2) % factor != 0) {
    throw std::invalid_argument("resize_mask: " + shape_str(m) + " not divisible by " + std::to_string(factor));
  }
  auto out = F::avg_pool2d(m, F::AvgPool2dFuncOptions(factor).stride(factor));
  return mask_channel.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor rectangle_mask(int height, int width, int x0, int y0, int x1, int y1) {
  if (x0 < 0 || y0 < 0 || x1 > width || y1 > height || x0 >= x1 || y0 >= y1) {
    throw std::invalid_argument("rectangle_mask: box [" + std::to_string(x0) + "," + std::to_string(y0) + "," +
                                std::to_string(x1) + "," + std::to_string(y1) + ") invalid for " +
                                std::to_string(height) + "x" + std::to_string(width));
  }
  auto m = torch::zeros({1, height, width});
  m.index_put_({0, torch::indexing::Slice(y0, y1), torch::indexing::Slice(x0, x1)}, 1.0);
  return m;
}

torch::Tensor mask_to_bbox(const torch::Tensor& mask) {
  const auto plane = as_plane(mask);
  const auto b = support_bounds(plane);
  if (!b) throw std::invalid_argument("mask_to_bbox: empty mask");
  return rectangle_mask(static_cast<int>(plane.size(0)), static_cast<int>(plane.size(1)), b->x0, b->y0, b->x1 + 1,
                        b->y1 + 1);
}

torch::Tensor augment_square(const torch::Tensor& mask, std::uint64_t seed, double max_margin) {
  const auto plane = as_plane(mask).to(torch::kFloat32);
  const int height = static_cast<int>(plane.size(0));
  const int width = static_cast<int>(plane.size(1));
  if (!support_bounds(plane)) {
    std::cerr << "warning: augment_square on an empty mask; returning the full frame\n";
    return torch::ones({1, height, width});
  }
  Rng rng(seed);
  const int radius = static_cast<int>(rng.randint(0, 2));
  auto m = plane.unsqueeze(0).unsqueeze(0);
  if (radius > 0) {
    const auto k = 2 * radius + 1;
    m = F::max_pool2d(m, F::MaxPool2dFuncOptions(k).stride(1).padding(radius));
    m = -F::max_pool2d(-m, F::MaxPool2dFuncOptions(k).stride(1).padding(radius));
  }
  const auto b = *support_bounds(m[0][0]);
  const int bw = b.x1 - b.x0 + 1;
  const int bh = b.y1 - b.y0 + 1;
  auto margin = [&](int extent) { return static_cast<int>(std::lround(rng.uniform(0.0, max_margin) * extent)); };
  const int left = margin(bw);
  const int right = margin(bw);
  const int top = margin(bh);
  const int bottom = margin(bh);
  return rectangle_mask(height, width, std::max(0, b.x0 - left), std::max(0, b.y0 - top),
                        std::min(width, b.x1 + 1 + right), std::min(height, b.y1 + 1 + bottom));
}

torch::Tensor select_training_mask(const SampleTriple& sample, Task task, Stage stage, std::uint64_t seed) {
  if (task == Task::kVton) return sample.person_mask;
  switch (stage) {
    case Stage::kStage1: return sample.flat_mask;
    case Stage::kStage2: return augment_square(sample.flat_mask, seed);
    case Stage::kInference: break;
  }
  throw std::invalid_argument("select_training_mask: inference stage has no training mask");
}

AssembledInput assemble(const torch::Tensor& noised_target, const torch::Tensor& guidance_latent,
                        const torch::Tensor& mask_latent, Task task, Stage stage, std::int64_t timestep) {
  auto z = noised_target.dim() == 3 ? noised_target.unsqueeze(0) : noised_target;
  auto g = guidance_latent.dim() == 3 ? guidance_latent.unsqueeze(0) : guidance_latent;
  auto m = mask_latent.dim() == 3 ? mask_latent.unsqueeze(0) : mask_latent;
  if (z.sizes() != g.sizes()) {
    throw std::invalid_argument("assemble: guidance latent expected " + shape_str(z) + ", got " + shape_str(g));
  }
  if (m.dim() != 4 || m.size(0) != z.size(0) || m.size(1) != 1 || m.size(2) != z.size(2) || m.size(3) != z.size(3)) {
    throw std::invalid_argument("assemble: mask latent expected [" + std::to_string(z.size(0)) + ", 1, " +
                                std::to_string(z.size(2)) + ", " + std::to_string(z.size(3)) + "], got " +
                                shape_str(m));
  }
  return {torch::cat({z, g, m}, 1), task, stage, timestep, CanvasLayout::for_task(task)};
}

torch::Tensor crop_result(const torch::Tensor& canvas, Task /*task*/) { return left_half(canvas); }

InferenceCanvases vtoff_inference_canvases(const torch::Tensor& person, const std::optional<torch::Tensor>& box,
                                           ZeroMaskMode mode) {
  const auto bg = flat_background();
  auto background = torch::tensor({bg[0], bg[1], bg[2]}).reshape({3, 1, 1}).expand_as(person).contiguous();
  torch::Tensor generate_region;  // 1 = to be generated
  if (box) {
    generate_region = *box;
  } else if (mode == ZeroMaskMode::kGeneratedHalfZero) {
    generate_region = torch::ones({1, person.size(-2), person.size(-1)});
  } else {
    generate_region = torch::zeros({1, person.size(-2), person.size(-1)});
  }
  InferenceCanvases out;
  out.guidance = build_guidance(person, background, generate_region, Task::kVtoff, /*strict=*/false);
  out.mask_channel = build_mask_channel(generate_region, Task::kVtoff);
  return out;
}

InferenceCanvases vton_inference_canvases(const torch::Tensor& person, const torch::Tensor& mask,
                                          const torch::Tensor& garment) {
  return {build_guidance(person, garment, mask, Task::kVton, /*strict=*/false), build_mask_channel(mask, Task::kVton)};
}

}  // namespace twgtm
