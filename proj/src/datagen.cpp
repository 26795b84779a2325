#include "twgtm/datagen.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "twgtm/image_io.hpp"

namespace twgtm {
namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr Rgb kPersonBackground{188, 194, 204};
constexpr Rgb kFlatBackground{240, 240, 240};
constexpr std::array<Rgb, 4> kSkinTones{{{224, 188, 160}, {198, 152, 120}, {160, 112, 82}, {112, 76, 56}}};

struct Canvas {
  int height;
  int width;
  std::vector<std::uint8_t> rgb;   // HxWx3
  std::vector<std::uint8_t> mask;  // HxW, 0/1

  Canvas(int h, int w, Rgb fill) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3), mask(static_cast<std::size_t>(h) * w, 0) {
    for (std::size_t i = 0; i < mask.size(); ++i) set(i, fill);
  }
  void set(std::size_t pixel, Rgb c) {
    rgb[pixel * 3 + 0] = c[0];
    rgb[pixel * 3 + 1] = c[1];
    rgb[pixel * 3 + 2] = c[2];
  }
  Rgb get(std::size_t pixel) const { return {rgb[pixel * 3], rgb[pixel * 3 + 1], rgb[pixel * 3 + 2]}; }
};

// Axis-aligned box in normalized [0,1] coordinates (u horizontal, v vertical).
struct Box {
  double u0, u1, v0, v1;
  bool contains(double u, double v) const { return u >= u0 && u < u1 && v >= v0 && v < v1; }
};

// Trapezoid spanning [v0, v1] centred at u=0.5, half widths interpolated.
struct Trapezoid {
  double v0, v1, half_top, half_bottom;
  bool contains(double u, double v) const {
    if (v < v0 || v >= v1) return false;
    const double s = (v - v0) / (v1 - v0);
    const double half = half_top + s * (half_bottom - half_top);
    return std::abs(u - 0.5) < half;
  }
};

bool in_ellipse(double u, double v, double cu, double cv, double ru, double rv) {
  const double du = (u - cu) / ru;
  const double dv = (v - cv) / rv;
  return du * du + dv * dv <= 1.0;
}

bool in_body(double u, double v) {
  if (in_ellipse(u, v, 0.5, 0.12, 0.09, 0.075)) return true;  // head
  if (Box{0.46, 0.54, 0.18, 0.24}.contains(u, v)) return true;  // neck
  if (in_ellipse(u, v, 0.5, 0.40, 0.21, 0.19)) return true;   // torso
  if (Box{0.17, 0.30, 0.25, 0.56}.contains(u, v)) return true;  // left arm
  if (Box{0.70, 0.83, 0.25, 0.56}.contains(u, v)) return true;  // right arm
  if (Box{0.33, 0.49, 0.52, 0.98}.contains(u, v)) return true;  // left leg
  if (Box{0.51, 0.67, 0.52, 0.98}.contains(u, v)) return true;  // right leg
  return false;
}

struct GarmentShape {
  std::vector<Box> boxes;
  std::vector<Trapezoid> traps;
  double v_top = 0.0;
  double v_bottom = 1.0;

  bool contains(double u, double v) const {
    for (const auto& b : boxes)
      if (b.contains(u, v)) return true;
    for (const auto& t : traps)
      if (t.contains(u, v)) return true;
    return false;
  }
};

GarmentShape make_shape(Category category, Rng& rng) {
  GarmentShape shape;
  switch (category) {
    case Category::kUpper: {
      const double v0 = rng.uniform(0.20, 0.24);
      const double v1 = rng.uniform(0.74, 0.80);
      const double top = rng.uniform(0.24, 0.30);
      const double bottom = rng.uniform(0.21, 0.28);
      const double sleeve_w = rng.uniform(0.08, 0.14);
      const double sleeve_h = rng.uniform(0.12, 0.20);
      shape.traps.push_back({v0, v1, top, bottom});
      shape.boxes.push_back({0.5 - top - sleeve_w, 0.5 - top + 0.01, v0, v0 + sleeve_h});
      shape.boxes.push_back({0.5 + top - 0.01, 0.5 + top + sleeve_w, v0, v0 + sleeve_h});
      shape.v_top = v0;
      shape.v_bottom = v1;
      break;
    }
    case Category::kLower: {
      const double v0 = rng.uniform(0.10, 0.14);
      const double waist = rng.uniform(0.10, 0.13);
      const double v1 = rng.uniform(0.86, 0.92);
      const double half = rng.uniform(0.19, 0.25);
      const double gap = rng.uniform(0.01, 0.04);
      shape.boxes.push_back({0.5 - half, 0.5 + half, v0, v0 + waist});
      shape.boxes.push_back({0.5 - half, 0.5 - gap, v0 + waist, v1});
      shape.boxes.push_back({0.5 + gap, 0.5 + half, v0 + waist, v1});
      shape.v_top = v0;
      shape.v_bottom = v1;
      break;
    }
    case Category::kDress: {
      const double v0 = rng.uniform(0.08, 0.12);
      const double v1 = rng.uniform(0.88, 0.93);
      shape.traps.push_back({v0, v1, rng.uniform(0.13, 0.19), rng.uniform(0.28, 0.36)});
      shape.v_top = v0;
      shape.v_bottom = v1;
      break;
    }
  }
  return shape;
}

GarmentWarp make_warp(Category category, const GarmentShape& shape, int height, int width, Rng& rng) {
  GarmentWarp warp;
  double body_v = 0.4;
  double sx = 0.72;
  double sy = 0.66;
  switch (category) {
    case Category::kUpper: body_v = 0.40; sx = 0.74; sy = 0.66; break;
    case Category::kLower: body_v = 0.74; sx = 0.72; sy = 0.54; break;
    case Category::kDress: body_v = 0.58; sx = 0.78; sy = 0.80; break;
  }
  warp.scale_x = sx * rng.uniform(0.93, 1.07);
  warp.scale_y = sy * rng.uniform(0.93, 1.07);
  warp.shear = rng.uniform(-0.12, 0.12);
  warp.flat_anchor = {0.5 * width, 0.5 * (shape.v_top + shape.v_bottom) * height};
  warp.body_anchor = {(0.5 + rng.uniform(-0.03, 0.03)) * width,
                      (body_v + rng.uniform(-0.03, 0.03)) * height};
  return warp;
}

// Inverse map of a person-space pixel centre to a flat-canvas pixel index.
// Returns false when the preimage leaves the canvas.
bool preimage(const GarmentWarp& warp, int px, int py, int height, int width, int& qx, int& qy) {
  const double dx = (px + 0.5 - warp.body_anchor[0]) / warp.scale_x;
  const double dy = ((py + 0.5 - warp.body_anchor[1]) - warp.shear * (px + 0.5 - warp.body_anchor[0])) / warp.scale_y;
  const double fx = std::floor(dx + warp.flat_anchor[0]);
  const double fy = std::floor(dy + warp.flat_anchor[1]);
  if (fx < 0 || fy < 0 || fx >= width || fy >= height) return false;
  qx = static_cast<int>(fx);
  qy = static_cast<int>(fy);
  return true;
}

Rgb random_color(Rng& rng) {
  return {static_cast<std::uint8_t>(rng.randint(16, 232)), static_cast<std::uint8_t>(rng.randint(16, 232)),
          static_cast<std::uint8_t>(rng.randint(16, 232))};
}

torch::Tensor canvas_image(const Canvas& c) {
  auto hwc = torch::from_blob(const_cast<std::uint8_t*>(c.rgb.data()), {c.height, c.width, 3}, torch::kUInt8);
  return u8_to_image(hwc);
}

torch::Tensor canvas_mask(const Canvas& c) {
  auto hw = torch::from_blob(const_cast<std::uint8_t*>(c.mask.data()), {1, c.height, c.width}, torch::kUInt8);
  return hw.to(torch::kFloat32);
}

nlohmann::json warp_to_json(const GarmentWarp& w) {
  return {{"scale_x", w.scale_x}, {"scale_y", w.scale_y}, {"shear", w.shear},
          {"flat_anchor", w.flat_anchor}, {"body_anchor", w.body_anchor}};
}

GarmentWarp warp_from_json(const nlohmann::json& j) {
  GarmentWarp w;
  w.scale_x = j.at("scale_x").get<double>();
  w.scale_y = j.at("scale_y").get<double>();
  w.shear = j.at("shear").get<double>();
  w.flat_anchor = j.at("flat_anchor").get<std::array<double, 2>>();
  w.body_anchor = j.at("body_anchor").get<std::array<double, 2>>();
  return w;
}

}  // namespace

std::array<float, 3> flat_background() {
  auto px = torch::tensor({kFlatBackground[0], kFlatBackground[1], kFlatBackground[2]}, torch::kUInt8)
                .reshape({1, 1, 3});
  auto img = u8_to_image(px);
  return {img[0][0][0].item<float>(), img[1][0][0].item<float>(), img[2][0][0].item<float>()};
}

torch::Tensor u8_to_image(const torch::Tensor& hwc) {
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

torch::Tensor apply_warp(const GarmentWarp& warp, const torch::Tensor& flat, float fill) {
  TORCH_CHECK(flat.dim() == 3, "apply_warp: expected CxHxW");
  const int channels = static_cast<int>(flat.size(0));
  const int height = static_cast<int>(flat.size(1));
  const int width = static_cast<int>(flat.size(2));
  auto src = flat.to(torch::kFloat32).contiguous();
  auto out = torch::full({channels, height, width}, fill, torch::kFloat32);
  auto s = src.accessor<float, 3>();
  auto o = out.accessor<float, 3>();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      int qx = 0, qy = 0;
      if (!preimage(warp, x, y, height, width, qx, qy)) continue;
      for (int c = 0; c < channels; ++c) o[c][y][x] = s[c][qy][qx];
    }
  }
  return out;
}

SampleTriple generate_sample(std::uint64_t seed, Category category, int height, int width, int factor) {
  if (factor <= 0 || height <= 0 || width <= 0 || height % factor != 0 || width % factor != 0) {
    throw std::invalid_argument("generate_sample: " + std::to_string(height) + "x" + std::to_string(width) +
                                " is not divisible by codec factor " + std::to_string(factor));
  }
  if (static_cast<int>(category) < 0 || static_cast<int>(category) >= kNumCategories) {
    throw std::invalid_argument("generate_sample: invalid category " + std::to_string(static_cast<int>(category)));
  }
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(category)));

  const GarmentShape shape = make_shape(category, rng);
  const auto pattern = static_cast<TexturePattern>(rng.randint(0, 2));
  const int n_colors = static_cast<int>(rng.randint(2, 3));
  std::vector<Rgb> colors;
  for (int i = 0; i < n_colors; ++i) colors.push_back(random_color(rng));
  const int period = std::max<int>(2, static_cast<int>(rng.randint(4, 8)) * width / 48);
  const Rgb skin = kSkinTones[static_cast<std::size_t>(rng.randint(0, kSkinTones.size() - 1))];
  const GarmentWarp warp = make_warp(category, shape, height, width, rng);

  auto texture = [&](int qx, int qy) -> Rgb {
    switch (pattern) {
      case TexturePattern::kSolid: return colors[0];
      case TexturePattern::kStripe: return colors[static_cast<std::size_t>((qy / period) % n_colors)];
      case TexturePattern::kChecker: return colors[static_cast<std::size_t>((qx / period + qy / period) % n_colors)];
    }
    return colors[0];
  };

  Canvas flat(height, width, kFlatBackground);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      const double v = (y + 0.5) / height;
      if (!shape.contains(u, v)) continue;
      const auto i = static_cast<std::size_t>(y) * width + x;
      flat.mask[i] = 1;
      flat.set(i, texture(x, y));
    }
  }

  Canvas person(height, width, kPersonBackground);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto i = static_cast<std::size_t>(y) * width + x;
      if (in_body((x + 0.5) / width, (y + 0.5) / height)) person.set(i, skin);
      int qx = 0, qy = 0;
      if (!preimage(warp, x, y, height, width, qx, qy)) continue;
      const auto q = static_cast<std::size_t>(qy) * width + qx;
      if (!flat.mask[q]) continue;
      person.mask[i] = 1;
      person.set(i, flat.get(q));
    }
  }

  SampleTriple s;
  s.person_image = canvas_image(person);
  s.garment_image = canvas_image(flat);
  s.person_mask = canvas_mask(person);
  s.flat_mask = canvas_mask(flat);
  s.category = category;
  s.seed = seed;
  s.warp = warp;
  s.pattern = pattern;
  return s;
}

std::string split_for_index(int index) { return index % 10 == 9 ? "test" : "train"; }

std::uint64_t sample_seed(std::uint64_t dataset_seed, int index) {
  return mix_seed(dataset_seed, static_cast<std::uint64_t>(index));
}

Category sample_category(int index) { return static_cast<Category>(index % kNumCategories); }

DatasetManifest generate_dataset(int n, std::uint64_t seed, const std::filesystem::path& out_dir, int height,
                                 int width) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1, got " + std::to_string(n));
  namespace fs = std::filesystem;
  DatasetManifest manifest{height, width, seed, {}};
  try {
    for (const char* split : {"train", "test"}) {
      for (const char* kind : {"person", "garment", "person_mask", "flat_mask", "warp"}) {
        fs::create_directories(out_dir / split / kind);
      }
    }
  } catch (const fs::filesystem_error& e) {
    throw std::runtime_error("generate_dataset: cannot create '" + out_dir.string() + "': " + e.what());
  }

  nlohmann::json samples = nlohmann::json::array();
  for (int i = 0; i < n; ++i) {
    const ManifestEntry entry{i, split_for_index(i), sample_category(i), sample_seed(seed, i)};
    const auto s = generate_sample(entry.seed, entry.category, height, width);
    const auto dir = out_dir / entry.split;
    const auto name = std::to_string(i);
    write_image_png(dir / "person" / (name + ".png"), s.person_image);
    write_image_png(dir / "garment" / (name + ".png"), s.garment_image);
    write_mask_png(dir / "person_mask" / (name + ".png"), s.person_mask);
    write_mask_png(dir / "flat_mask" / (name + ".png"), s.flat_mask);
    std::ofstream warp_file(dir / "warp" / (name + ".json"));
    if (!warp_file) throw std::runtime_error("cannot write '" + (dir / "warp" / (name + ".json")).string() + "'");
    warp_file << warp_to_json(s.warp).dump(2) << "\n";
    samples.push_back({{"index", i}, {"split", entry.split}, {"category", to_string(entry.category)},
                       {"seed", entry.seed}, {"file", name + ".png"}});
    manifest.entries.push_back(entry);
  }

  const nlohmann::json doc{{"height", height}, {"width", width}, {"seed", seed}, {"n", n},
                           {"split_rule", "index % 10 == 9 -> test"}, {"samples", samples}};
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write '" + (out_dir / "manifest.json").string() + "'");
  out << doc.dump(2) << "\n";
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw std::runtime_error("no manifest at '" + (root / "manifest.json").string() + "'");
  const auto doc = nlohmann::json::parse(in);
  DatasetManifest m;
  m.height = doc.at("height").get<int>();
  m.width = doc.at("width").get<int>();
  m.seed = doc.at("seed").get<std::uint64_t>();
  for (const auto& s : doc.at("samples")) {
    m.entries.push_back({s.at("index").get<int>(), s.at("split").get<std::string>(),
                         parse_category(s.at("category").get<std::string>()), s.at("seed").get<std::uint64_t>()});
  }
  return m;
}

std::vector<SampleTriple> load_split(const std::filesystem::path& root, const std::string& split) {
  if (split != "train" && split != "test" && split != "all") {
    throw std::invalid_argument("unknown split '" + split + "' (expected train|test|all)");
  }
  const auto manifest = read_manifest(root);
  std::vector<SampleTriple> out;
  for (const auto& e : manifest.entries) {
    if (split != "all" && e.split != split) continue;
    const auto dir = root / e.split;
    const auto name = std::to_string(e.index);
    SampleTriple s;
    s.person_image = read_image_png(dir / "person" / (name + ".png"));
    s.garment_image = read_image_png(dir / "garment" / (name + ".png"));
    s.person_mask = read_mask_png(dir / "person_mask" / (name + ".png"));
    s.flat_mask = read_mask_png(dir / "flat_mask" / (name + ".png"));
    std::ifstream warp_file(dir / "warp" / (name + ".json"));
    if (warp_file) s.warp = warp_from_json(nlohmann::json::parse(warp_file));
    s.category = e.category;
    s.seed = e.seed;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace twgtm
