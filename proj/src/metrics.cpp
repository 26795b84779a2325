#include "twgtm/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>

#include "twgtm/assembly.hpp"
#include "twgtm/training.hpp"

namespace twgtm {

namespace F = torch::nn::functional;

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr double kMsWeights[] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

torch::Tensor batched(const torch::Tensor& t) {
  if (t.dim() == 3) return t.unsqueeze(0);
  if (t.dim() == 4) return t;
  throw std::invalid_argument("metrics: expected C x H x W or B x C x H x W");
}

void check_pair(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw std::invalid_argument("metrics: input shapes differ");
}

torch::Tensor gaussian_window(int64_t channels, torch::ScalarType dtype) {
  auto x = torch::arange(kWindow, torch::kFloat64) - (kWindow - 1) / 2.0;
  auto g = torch::exp(-(x * x) / (2.0 * kSigma * kSigma));
  g = g / g.sum();
  auto w = torch::outer(g, g).to(dtype);
  return w.expand({channels, 1, kWindow, kWindow}).contiguous();
}

// Per-image SSIM and contrast-structure terms, each of shape B.
std::pair<torch::Tensor, torch::Tensor> ssim_terms(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.size(2) < kWindow || a.size(3) < kWindow) {
    throw std::invalid_argument("metrics: image smaller than the 11x11 window");
  }
  const auto channels = a.size(1);
  const auto w = gaussian_window(channels, a.scalar_type());
  auto filt = [&](const torch::Tensor& t) { return F::conv2d(t, w, F::Conv2dFuncOptions().groups(channels)); };
  auto mu_a = filt(a);
  auto mu_b = filt(b);
  auto var_a = filt(a * a) - mu_a * mu_a;
  auto var_b = filt(b * b) - mu_b * mu_b;
  auto cov = filt(a * b) - mu_a * mu_b;
  auto cs = (2.0 * cov + kC2) / (var_a + var_b + kC2);
  auto lum = (2.0 * mu_a * mu_b + kC1) / (mu_a * mu_a + mu_b * mu_b + kC1);
  return {(lum * cs).mean({1, 2, 3}), cs.mean({1, 2, 3})};
}

// Up to three scales, fewer when the coarsest one would not fit the window.
int usable_scales(const torch::Tensor& image) {
  auto side = std::min(image.size(-2), image.size(-1));
  int scales = 1;
  while (scales < 3 && (side >> scales) >= kWindow) ++scales;
  return scales;
}

}  // namespace

torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b) {
  check_pair(a, b);
  auto x = batched(a).to(torch::kFloat64);
  auto y = batched(b).to(torch::kFloat64);
  return ssim_terms(x, y).first;
}

torch::Tensor ms_ssim(const torch::Tensor& a, const torch::Tensor& b, int scales) {
  check_pair(a, b);
  if (scales < 1 || scales > 5) throw std::invalid_argument("ms_ssim: scales must lie in [1, 5]");
  double total = 0.0;
  for (int i = 0; i < scales; ++i) total += kMsWeights[i];
  auto x = batched(a).to(torch::kFloat64);
  auto y = batched(b).to(torch::kFloat64);
  auto result = torch::ones({x.size(0)}, torch::kFloat64);
  for (int i = 0; i < scales; ++i) {
    const double weight = kMsWeights[i] / total;
    auto [s, cs] = ssim_terms(x, y);
    // Negative contrast terms are clamped so the fractional power stays real.
    auto term = (i + 1 == scales ? s : cs).clamp_min(0.0);
    result = result * term.pow(weight);
    if (i + 1 < scales) {
      x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
      y = F::avg_pool2d(y, F::AvgPool2dFuncOptions(2));
    }
  }
  return result;
}

torch::Tensor psnr(const torch::Tensor& a, const torch::Tensor& b) {
  check_pair(a, b);
  auto x = batched(a).to(torch::kFloat64);
  auto y = batched(b).to(torch::kFloat64);
  auto mse = (x - y).pow(2).mean({1, 2, 3});
  return -10.0 * torch::log10(mse);
}

MaskOverlap mask_overlap(const torch::Tensor& pred, const torch::Tensor& target) {
  check_pair(pred, target);
  auto p = pred >= 0.5;
  auto t = target >= 0.5;
  const double inter = (p & t).sum().item<double>();
  const double uni = (p | t).sum().item<double>();
  const double sizes = p.sum().item<double>() + t.sum().item<double>();
  MaskOverlap m;
  m.iou = uni == 0.0 ? 1.0 : inter / uni;
  m.dice = sizes == 0.0 ? 1.0 : 2.0 * inter / sizes;
  return m;
}

torch::Tensor to_unit_range(const torch::Tensor& image) { return ((image + 1.0) * 0.5).clamp(0.0, 1.0); }

nlohmann::json EvalReport::summary_json() const {
  nlohmann::json j{{"task", to_string(task)},
                   {"samples", rows.size()},
                   {"ssim", mean_ssim},
                   {"ms_ssim", mean_ms_ssim},
                   {"psnr", mean_psnr}};
  if (mean_mask_iou) j["mask_iou"] = *mean_mask_iou;
  if (mean_mask_dice) j["mask_dice"] = *mean_mask_dice;
  return j;
}

EvalReport evaluate(TwgtmModel& model, const std::vector<SampleTriple>& samples, const std::vector<std::string>& ids,
                    const EvalOptions& options) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  if (!ids.empty() && ids.size() != samples.size()) throw std::invalid_argument("evaluate: ids/samples size mismatch");
  if (options.batch_size < 1) throw std::invalid_argument("evaluate: batch size must be >= 1");
  std::size_t count = samples.size();
  if (options.max_samples > 0) count = std::min<std::size_t>(count, static_cast<std::size_t>(options.max_samples));

  EvalReport report;
  report.task = options.task;
  double iou_sum = 0.0, dice_sum = 0.0;
  for (std::size_t start = 0; start < count; start += static_cast<std::size_t>(options.batch_size)) {
    const auto end = std::min(count, start + static_cast<std::size_t>(options.batch_size));
    std::vector<InferenceRequest> requests;
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = samples[i];
      InferenceRequest r;
      r.person = s.person_image;
      r.category = s.category;
      if (options.task == Task::kVton) {
        r.garment = s.garment_image;
        r.mask = s.person_mask;
      } else if (options.use_bbox) {
        r.box = mask_to_bbox(s.flat_mask);
      }
      requests.push_back(std::move(r));
    }
    InferenceOptions inf;
    inf.steps = options.steps;
    inf.seed = mix_seed(options.seed, start);
    const auto results = run_inference(model, options.task, requests, inf);
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = samples[i];
      const auto& r = results[i - start];
      const auto& target = options.task == Task::kVton ? s.person_image : s.garment_image;
      auto a = to_unit_range(r.image);
      auto b = to_unit_range(target);
      EvalRow row;
      row.id = ids.empty() ? std::to_string(i) : ids[i];
      row.category = s.category;
      row.ssim = ssim(a, b).item<double>();
      row.ms_ssim = ms_ssim(a, b, usable_scales(a)).item<double>();
      row.psnr = psnr(a, b).item<double>();
      if (r.flat_mask) {
        const auto m = mask_overlap(*r.flat_mask, s.flat_mask);
        row.mask_iou = m.iou;
        row.mask_dice = m.dice;
        iou_sum += m.iou;
        dice_sum += m.dice;
      }
      report.mean_ssim += row.ssim;
      report.mean_ms_ssim += row.ms_ssim;
      report.mean_psnr += row.psnr;
      report.rows.push_back(std::move(row));
    }
  }
  const double n = static_cast<double>(report.rows.size());
  report.mean_ssim /= n;
  report.mean_ms_ssim /= n;
  report.mean_psnr /= n;
  if (options.task == Task::kVtoff) {
    report.mean_mask_iou = iou_sum / n;
    report.mean_mask_dice = dice_sum / n;
  }
  return report;
}

void write_report(const EvalReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto stem = "eval_" + to_string(report.task);
  const auto csv_path = out_dir / (stem + ".csv");
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write '" + csv_path.string() + "'");
  csv << std::setprecision(9) << "id,category,ssim,ms_ssim,psnr,mask_iou,mask_dice\n";
  for (const auto& r : report.rows) {
    csv << r.id << ',' << to_string(r.category) << ',' << r.ssim << ',' << r.ms_ssim << ',' << r.psnr << ',';
    if (r.mask_iou) csv << *r.mask_iou;
    csv << ',';
    if (r.mask_dice) csv << *r.mask_dice;
    csv << '\n';
  }
  const auto json_path = out_dir / (stem + ".json");
  std::ofstream js(json_path);
  if (!js) throw std::runtime_error("cannot write '" + json_path.string() + "'");
  js << report.summary_json().dump(2) << '\n';
}

}  // namespace twgtm
