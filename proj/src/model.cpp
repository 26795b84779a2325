#include "twgtm/model.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

namespace twgtm {

SamConfig ModelConfig::sam() const {
  SamConfig c;
  c.image_height = image_height;
  c.image_width = image_width;
  c.encoder_dim = dim;
  c.dim = dim;
  c.num_queries = semantic_queries;
  c.prompt_tokens = prompt_tokens;
  c.depth = qformer_depth;
  c.heads = heads;
  return c;
}

SrmConfig ModelConfig::srm() const {
  SrmConfig c;
  c.image_height = image_height;
  c.image_width = image_width;
  c.dim = dim;
  c.num_queries = task_queries;
  c.units = taskformer_units;
  c.heads = heads;
  c.out_channels = unet_widths;
  c.latent_height = latent_height();
  c.latent_width = latent_width();
  return c;
}

DenoiserConfig ModelConfig::denoiser() const {
  DenoiserConfig c;
  c.in_channels = input_channels();
  c.out_channels = latent_channels();
  c.widths = unet_widths;
  c.res_blocks = res_blocks;
  c.context_dim = dim;
  c.heads = heads;
  c.latent_height = latent_height();
  c.latent_width = latent_width();
  c.num_timesteps = num_timesteps;
  c.enable_extended_attention = extended_attention;
  c.enable_native_crossattn = native_crossattn;
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"image_height", image_height},       {"image_width", image_width},
          {"codec_factor", codec_factor},       {"spatial_concat", spatial_concat},
          {"extended_attention", extended_attention}, {"native_crossattn", native_crossattn},
          {"dim", dim},                         {"semantic_queries", semantic_queries},
          {"prompt_tokens", prompt_tokens},     {"qformer_depth", qformer_depth},
          {"task_queries", task_queries},       {"taskformer_units", taskformer_units},
          {"heads", heads},                     {"unet_widths", unet_widths},
          {"res_blocks", res_blocks},           {"num_timesteps", num_timesteps},
          {"beta_start", beta_start},           {"beta_end", beta_end}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"image_height", "image_width", "codec_factor", "spatial_concat",
                                           "extended_attention", "native_crossattn", "dim", "semantic_queries",
                                           "prompt_tokens", "qformer_depth", "task_queries", "taskformer_units",
                                           "heads", "unet_widths", "res_blocks", "num_timesteps", "beta_start",
                                           "beta_end"};
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) throw std::invalid_argument("unknown model config key '" + item.key() + "'");
  }
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("image_height", c.image_height);
  get("image_width", c.image_width);
  get("codec_factor", c.codec_factor);
  get("spatial_concat", c.spatial_concat);
  get("extended_attention", c.extended_attention);
  get("native_crossattn", c.native_crossattn);
  get("dim", c.dim);
  get("semantic_queries", c.semantic_queries);
  get("prompt_tokens", c.prompt_tokens);
  get("qformer_depth", c.qformer_depth);
  get("task_queries", c.task_queries);
  get("taskformer_units", c.taskformer_units);
  get("heads", c.heads);
  get("unet_widths", c.unet_widths);
  get("res_blocks", c.res_blocks);
  get("num_timesteps", c.num_timesteps);
  get("beta_start", c.beta_start);
  get("beta_end", c.beta_end);
  return c;
}

TwgtmModelImpl::TwgtmModelImpl(const ModelConfig& cfg)
    : config(cfg),
      codec(cfg.codec_factor),
      schedule(make_schedule(cfg.num_timesteps, cfg.beta_start, cfg.beta_end)) {
  if (cfg.image_height % cfg.codec_factor != 0 || cfg.canvas_width() % cfg.codec_factor != 0) {
    throw std::invalid_argument("model: image size not divisible by codec factor");
  }
  sam = register_module("sam", SemanticAbstraction(cfg.sam()));
  srm = register_module("srm", SpatialRefinement(cfg.srm()));
  unet = register_module("unet", Denoiser(cfg.denoiser()));
  set_stage(Stage::kStage1);
}

Conditioning TwgtmModelImpl::condition(const torch::Tensor& reference, const torch::Tensor& categories,
                                       bool with_spatial) {
  Conditioning c;
  c.semantic = sam(reference, categories);
  if (with_spatial) c.spatial = srm(reference, c.semantic.filtered);
  return c;
}

torch::Tensor TwgtmModelImpl::predict_noise(const torch::Tensor& input, const torch::Tensor& timesteps,
                                            const Conditioning& conditioning) {
  std::vector<torch::Tensor> spatial;
  if (unet->extended_attention_active()) {
    if (!conditioning.spatial) throw std::invalid_argument("predict_noise: spatial features required in this stage");
    spatial = conditioning.spatial->features;
  }
  // The network output is read as v; eps = sqrt(a) v + sqrt(1 - a) z_t. At
  // high noise eps is then mostly the skip term, which a small UNet cannot
  // reproduce on its own.
  auto out = unet(input, timesteps, conditioning.semantic.combined, spatial);
  auto table = torch::tensor(schedule.alphas_cum, torch::kFloat64);
  auto alpha = table.index_select(0, timesteps.to(torch::kLong).reshape({-1})).to(out.dtype()).reshape({-1, 1, 1, 1});
  auto z_t = input.narrow(1, 0, out.size(1));
  return alpha.sqrt() * out + (1.0 - alpha).sqrt() * z_t;
}

void TwgtmModelImpl::set_stage(Stage stage) { unet->set_extended_attention(stage != Stage::kStage1); }

std::vector<torch::Tensor> TwgtmModelImpl::trainable_parameters(Stage stage) {
  std::set<const void*> excluded;
  if (stage == Stage::kStage2) {
    for (const auto& p : srm->heads->garment_head_parameters()) excluded.insert(p.unsafeGetTensorImpl());
  }
  std::vector<torch::Tensor> out;
  for (auto& p : parameters()) {
    if (!p.requires_grad() || excluded.count(p.unsafeGetTensorImpl())) continue;
    out.push_back(p);
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'T', 'W', 'G', 'T', 'M', 'C', 'K', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

nlohmann::json meta_to_json(const CheckpointMeta& meta) {
  return {{"model", meta.model.to_json()}, {"stage", meta.stage}, {"step", meta.step}, {"extra", meta.extra}};
}

CheckpointMeta read_meta(std::istream& is, const std::filesystem::path& path) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("'" + path.string() + "' is not a checkpoint");
  }
  const auto len = read_pod<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint: truncated metadata in '" + path.string() + "'");
  const auto j = nlohmann::json::parse(text);
  CheckpointMeta meta;
  meta.model = ModelConfig::from_json(j.at("model"));
  meta.stage = j.at("stage").get<int>();
  meta.step = j.at("step").get<int64_t>();
  if (j.contains("extra")) meta.extra = j.at("extra");
  return meta;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, TwgtmModel& model, const CheckpointMeta& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
    os.write(kMagic, 8);
    const auto text = meta_to_json(meta).dump();
    write_pod<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto params = model->named_parameters();
    write_pod<std::uint64_t>(os, params.size());
    for (const auto& item : params) {
      const auto& name = item.key();
      auto t = item.value().detach().cpu().contiguous();
      const std::uint8_t dtype = t.scalar_type() == torch::kFloat64 ? 1 : 0;
      if (dtype == 0) t = t.to(torch::kFloat32);
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_pod<std::uint8_t>(os, dtype);
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim()));
      for (auto d : t.sizes()) write_pod<std::int64_t>(os, d);
      os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  return read_meta(is, path);
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, TwgtmModel& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  auto meta = read_meta(is, path);
  if (!(meta.model == model->config)) {
    throw std::invalid_argument("checkpoint '" + path.string() + "' was written for a different model config");
  }
  auto params = model->named_parameters();
  const auto count = read_pod<std::uint64_t>(is);
  if (count != params.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  torch::NoGradGuard no_grad;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto dtype = read_pod<std::uint8_t>(is);
    const auto ndim = read_pod<std::uint32_t>(is);
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = read_pod<std::int64_t>(is);
    auto t = torch::empty(dims, dtype == 1 ? torch::kFloat64 : torch::kFloat32);
    is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor '" + name + "'");
    auto* target = params.find(name);
    if (!target) throw std::runtime_error("checkpoint: unknown parameter '" + name + "'");
    if (target->sizes() != t.sizes()) throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    target->copy_(t);
  }
  return meta;
}

std::pair<TwgtmModel, CheckpointMeta> open_checkpoint(const std::filesystem::path& path) {
  const auto meta = read_checkpoint_meta(path);
  TwgtmModel model(meta.model);
  load_checkpoint(path, model);
  model->set_stage(meta.stage >= 2 ? Stage::kStage2 : Stage::kStage1);
  return {model, meta};
}

}  // namespace twgtm
