#include "twgtm/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace twgtm {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return f;
}

// data: row-major HxWxC uint8, C in {1, 3}.
void write_png_u8(const std::filesystem::path& path, const std::uint8_t* data, int height,
                  int width, int channels) {
  auto file = open_or_throw(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng: out of memory writing '" + path.string() + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng: failed writing '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // No timestamps or gamma chunks: identical pixels give identical bytes.
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Returns HxWxC uint8 tensor.
torch::Tensor read_png_u8(const std::filesystem::path& path, int want_channels) {
  auto file = open_or_throw(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng: out of memory reading '" + path.string() + "'");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng: failed reading '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool is_gray = (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA);
  if (want_channels == 3 && is_gray) png_set_gray_to_rgb(png);
  if (want_channels == 1 && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  if (static_cast<int>(png_get_channels(png, info)) != want_channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unexpected channel layout in '" + path.string() + "'");
  }
  auto out = torch::empty({height, width, want_channels}, torch::kUInt8);
  auto* base = out.data_ptr<std::uint8_t>();
  for (int y = 0; y < height; ++y) {
    png_read_row(png, base + static_cast<std::size_t>(y) * width * want_channels, nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_image_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw std::invalid_argument("write_image_png: expected 3xHxW");
  }
  auto u8 = ((image.detach().to(torch::kFloat32).cpu() + 1.0) * 127.5)
                .round()
                .clamp(0, 255)
                .to(torch::kUInt8)
                .permute({1, 2, 0})
                .contiguous();
  write_png_u8(path, u8.data_ptr<std::uint8_t>(), static_cast<int>(u8.size(0)),
               static_cast<int>(u8.size(1)), 3);
}

void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask) {
  if (mask.dim() != 3 || mask.size(0) != 1) {
    throw std::invalid_argument("write_mask_png: expected 1xHxW");
  }
  auto u8 = (mask.detach().to(torch::kFloat32).cpu() * 255.0)
                .round()
                .clamp(0, 255)
                .to(torch::kUInt8)[0]
                .contiguous();
  write_png_u8(path, u8.data_ptr<std::uint8_t>(), static_cast<int>(u8.size(0)),
               static_cast<int>(u8.size(1)), 1);
}

torch::Tensor read_image_png(const std::filesystem::path& path) {
  auto u8 = read_png_u8(path, 3);
  return u8.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

torch::Tensor read_mask_png(const std::filesystem::path& path) {
  auto u8 = read_png_u8(path, 1);
  return u8.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

torch::Tensor horizontal_strip(const std::vector<torch::Tensor>& panels) {
  if (panels.empty()) throw std::invalid_argument("horizontal_strip: no panels");
  std::vector<torch::Tensor> parts;
  const auto height = panels.front().size(-2);
  for (std::size_t i = 0; i < panels.size(); ++i) {
    auto p = panels[i].detach().to(torch::kFloat32).cpu();
    if (p.size(-2) != height) throw std::invalid_argument("horizontal_strip: height mismatch");
    if (p.size(0) == 1) p = (p * 2.0 - 1.0).expand({3, height, p.size(-1)});
    if (i > 0) parts.push_back(torch::full({3, height, 2}, -1.0f));
    parts.push_back(p);
  }
  return torch::cat(parts, 2);
}

}  // namespace twgtm
