// Command-line entry point: gen-data, train, sample, eval, inspect.

#include <cstdlib>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "twgtm/assembly.hpp"
#include "twgtm/config.hpp"
#include "twgtm/datagen.hpp"
#include "twgtm/image_io.hpp"
#include "twgtm/metrics.hpp"
#include "twgtm/model.hpp"
#include "twgtm/training.hpp"

namespace {

using namespace twgtm;
using Settings = std::map<std::string, std::string>;

constexpr const char* kDataRootEnv = "TWGTM_DATA_ROOT";

struct Invocation {
  std::string config_file;
  Settings settings;
  std::vector<std::string> overrides;  // --set section.key=value
};

void bind(CLI::App* app, Invocation& inv, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(flag, [&inv, key](const std::string& v) { inv.settings[key] = v; }, help);
}

void bind_flag(CLI::App* app, Invocation& inv, const std::string& flag, const std::string& key,
               const std::string& help) {
  app->add_flag_callback(flag, [&inv, key] { inv.settings[key] = "true"; }, help);
}

void common_options(CLI::App* app, Invocation& inv) {
  app->add_option("--config", inv.config_file, "Config file; explicit flags take precedence");
  app->add_option("--set", inv.overrides, "Override any config key: section.key=value (repeatable)");
}

RunConfig resolve(const std::string& command, const Invocation& inv) {
  Settings file;
  if (!inv.config_file.empty()) file = read_config_file(inv.config_file);
  Settings merged;
  for (const auto& o : inv.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects section.key=value, got '" + o + "'");
    merged[o.substr(0, eq)] = o.substr(eq + 1);
  }
  for (const auto& [k, v] : inv.settings) merged[k] = v;
  auto cfg = resolve_config(command, file, merged);
  if (cfg.data_root.empty()) {
    if (const char* env = std::getenv(kDataRootEnv)) cfg.data_root = env;
  }
  return cfg;
}

bool model_was_specified(const Invocation& inv) {
  Settings file;
  if (!inv.config_file.empty()) file = read_config_file(inv.config_file);
  auto touches_model = [](const Settings& s) {
    for (const auto& [k, v] : s) {
      if (is_model_key(k)) return true;
      if (k == "run.variant") {
        for (const auto& [pk, pv] : variant_settings(v)) {
          if (is_model_key(pk)) return true;
        }
      }
    }
    return false;
  };
  Settings overrides;
  for (const auto& o : inv.overrides) overrides[o.substr(0, o.find('='))] = o.substr(o.find('=') + 1);
  return touches_model(file) || touches_model(inv.settings) || touches_model(overrides);
}

std::filesystem::path require_data_root(const RunConfig& cfg) {
  if (cfg.data_root.empty()) {
    throw std::invalid_argument(std::string("no dataset root: pass --data or set ") + kDataRootEnv);
  }
  return cfg.data_root;
}

std::vector<std::string> split_ids(const std::filesystem::path& root, const std::string& split) {
  std::vector<std::string> ids;
  for (const auto& e : read_manifest(root).entries) {
    if (split == "all" || e.split == split) ids.push_back(std::to_string(e.index));
  }
  return ids;
}

int cmd_gen_data(const Invocation& inv) {
  auto cfg = resolve("gen-data", inv);
  const auto root = require_data_root(cfg);
  const auto manifest = generate_dataset(static_cast<int>(cfg.data.n), cfg.data.seed, root,
                                         static_cast<int>(cfg.data.height), static_cast<int>(cfg.data.width));
  write_config_echo(cfg, root / "config.ini");
  std::cout << "wrote " << manifest.entries.size() << " samples to " << root.string() << '\n';
  return 0;
}

int cmd_train(const Invocation& inv) {
  auto cfg = resolve("train", inv);
  const auto root = require_data_root(cfg);
  const auto samples = load_split(root, "train");
  if (samples.empty()) throw std::runtime_error("dataset '" + root.string() + "' has no training samples");

  std::optional<TwgtmModel> model;
  if (!cfg.checkpoint.empty()) {
    auto [loaded, meta] = open_checkpoint(cfg.checkpoint);
    if (model_was_specified(inv) && !(cfg.model == meta.model)) {
      throw std::invalid_argument("resume: model config does not match checkpoint '" + cfg.checkpoint.string() + "'");
    }
    if (cfg.train.stage == Stage::kStage2 && meta.stage < 1) {
      throw std::invalid_argument("resume: '" + cfg.checkpoint.string() + "' is not a trained checkpoint");
    }
    cfg.model = meta.model;
    model = loaded;
    std::cout << "resumed " << cfg.checkpoint.string() << " (stage " << meta.stage << ", step " << meta.step << ")\n";
  } else if (cfg.train.stage == Stage::kStage2) {
    throw std::invalid_argument("stage 2 starts from stage-1 weights: pass --resume <checkpoint>");
  } else {
    torch::manual_seed(cfg.train.seed);
    model = TwgtmModel(cfg.model);
  }

  const int stage_number = cfg.train.stage == Stage::kStage1 ? 1 : 2;
  write_config_echo(cfg, cfg.out_dir / ("config_train_stage" + std::to_string(stage_number) + ".ini"));
  const auto every = std::max<int64_t>(1, cfg.train.steps / 20);
  const auto result = train(*model, cfg.train, samples, cfg.out_dir, [&](const TrainLogRow& row) {
    if (row.step % every == 0 || row.step == cfg.train.steps) {
      std::cout << "stage " << stage_number << " step " << row.step << " " << to_string(row.task) << " loss "
                << row.total << " (diffusion " << row.diffusion << ", mask " << row.mask << ") lr "
                << row.learning_rate << '\n';
    }
  });
  std::cout << "checkpoint " << result.final_checkpoint.string() << '\n';
  return 0;
}

struct SampleInputs {
  std::string person, garment, mask;
  std::string category = "upper";
  int index = -1;
};

int cmd_sample(const Invocation& inv, const SampleInputs& in) {
  auto cfg = resolve("sample", inv);
  if (cfg.checkpoint.empty()) throw std::invalid_argument("sample needs --checkpoint");
  auto [model, meta] = open_checkpoint(cfg.checkpoint);

  InferenceRequest req;
  if (in.index >= 0) {
    const auto root = require_data_root(cfg);
    const auto samples = load_split(root, "all");
    const auto ids = split_ids(root, "all");
    const auto it = std::find(ids.begin(), ids.end(), std::to_string(in.index));
    if (it == ids.end()) throw std::invalid_argument("no sample with index " + std::to_string(in.index));
    const auto& s = samples[static_cast<std::size_t>(it - ids.begin())];
    req.person = s.person_image;
    req.garment = s.garment_image;
    req.mask = s.person_mask;
    req.category = s.category;
    if (cfg.sample.use_bbox && cfg.sample.task == Task::kVtoff && !cfg.sample.bbox) req.box = mask_to_bbox(s.flat_mask);
  } else {
    if (in.person.empty()) throw std::invalid_argument("sample needs --person (or --index with a dataset)");
    req.person = read_image_png(in.person);
    if (!in.garment.empty()) req.garment = read_image_png(in.garment);
    if (!in.mask.empty()) req.mask = read_mask_png(in.mask);
    req.category = parse_category(in.category);
  }
  if (cfg.sample.task == Task::kVton) req.box.reset();
  if (cfg.sample.bbox && cfg.sample.task == Task::kVtoff) {
    const auto& b = *cfg.sample.bbox;
    const int h = static_cast<int>(req.person.size(1));
    const int w = static_cast<int>(req.person.size(2));
    if (b[2] > w || b[3] > h) throw std::invalid_argument("--bbox lies outside the " + std::to_string(w) + "x" +
                                                          std::to_string(h) + " frame");
    req.box = rectangle_mask(h, w, b[0], b[1], b[2], b[3]);
  }

  InferenceOptions opts;
  opts.steps = cfg.sample.steps;
  opts.seed = cfg.sample.seed;
  opts.zero_mask_mode = cfg.sample.zero_mask_mode;
  const auto results = run_inference(model, cfg.sample.task, {req}, opts);
  const auto task = to_string(cfg.sample.task);
  std::filesystem::create_directories(cfg.out_dir);
  write_image_png(cfg.out_dir / ("sample_" + task + ".png"), results[0].image);
  write_image_png(cfg.out_dir / ("sample_" + task + "_canvas.png"), results[0].canvas);
  if (results[0].flat_mask) write_mask_png(cfg.out_dir / ("sample_" + task + "_mask.png"), *results[0].flat_mask);
  write_config_echo(cfg, cfg.out_dir / ("config_sample_" + task + ".ini"));
  std::cout << "wrote " << (cfg.out_dir / ("sample_" + task + ".png")).string() << '\n';
  return 0;
}

int cmd_eval(const Invocation& inv, bool both_tasks) {
  auto cfg = resolve("eval", inv);
  if (cfg.checkpoint.empty()) throw std::invalid_argument("eval needs --checkpoint");
  const auto root = require_data_root(cfg);
  auto [model, meta] = open_checkpoint(cfg.checkpoint);
  const auto samples = load_split(root, cfg.sample.split);
  const auto ids = split_ids(root, cfg.sample.split);
  std::vector<Task> tasks{cfg.sample.task};
  if (both_tasks) tasks = {Task::kVton, Task::kVtoff};
  for (auto task : tasks) {
    EvalOptions opts;
    opts.split = cfg.sample.split;
    opts.task = task;
    opts.steps = cfg.sample.steps;
    opts.seed = cfg.sample.seed;
    opts.max_samples = cfg.sample.max_samples;
    opts.use_bbox = cfg.sample.use_bbox;
    opts.batch_size = cfg.sample.batch_size;
    const auto report = evaluate(model, samples, ids, opts);
    write_report(report, cfg.out_dir);
    auto summary = report.summary_json();
    summary["checkpoint"] = cfg.checkpoint.string();
    summary["split"] = cfg.sample.split;
    std::cout << summary.dump() << '\n';
  }
  write_config_echo(cfg, cfg.out_dir / "config_eval.ini");
  return 0;
}

int cmd_inspect(const Invocation& inv, int count) {
  auto cfg = resolve("inspect", inv);
  if (!cfg.checkpoint.empty()) {
    const auto meta = read_checkpoint_meta(cfg.checkpoint);
    std::cout << nlohmann::json{{"model", meta.model.to_json()},
                                {"stage", meta.stage},
                                {"step", meta.step},
                                {"extra", meta.extra}}
                     .dump(2)
              << '\n';
    if (cfg.data_root.empty()) return 0;
  }
  const auto root = require_data_root(cfg);
  const auto samples = load_split(root, cfg.sample.split);
  const auto ids = split_ids(root, cfg.sample.split);
  const auto dir = cfg.out_dir / "inspect";
  std::filesystem::create_directories(dir);
  const auto n = std::min<std::size_t>(samples.size(), static_cast<std::size_t>(std::max(count, 0)));
  const auto stage = cfg.train.stage;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    const auto fill = flat_background();
    auto warped = apply_warp(s.warp, s.garment_image, fill[0]);
    // Raw sample: person, garment, person mask, flat mask, re-warped garment.
    write_image_png(dir / (ids[i] + ".png"),
                    horizontal_strip({s.person_image, s.garment_image, s.person_mask, s.flat_mask, warped}));
    // Model canvases as assembled for training: target | guidance | mask.
    for (auto task : {Task::kVton, Task::kVtoff}) {
      const auto m = select_training_mask(s, task, stage, mix_seed(cfg.train.seed, i));
      auto strip = horizontal_strip({build_target(s.person_image, s.garment_image, task),
                                     build_guidance(s.person_image, s.garment_image, m, task),
                                     build_mask_channel(m, task)});
      write_image_png(dir / (ids[i] + "_" + to_string(task) + ".png"), strip);
    }
  }
  std::cout << "wrote " << 3 * n << " strips to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-way garment transfer: synthetic data, training, sampling and evaluation"};
  app.require_subcommand(1);

  Invocation gen_inv, train_inv, sample_inv, eval_inv, inspect_inv;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic (person, garment, masks) dataset");
  common_options(gen, gen_inv);
  bind(gen, gen_inv, "--n", "data.n", "Number of samples");
  bind(gen, gen_inv, "--seed", "data.seed", "Dataset seed");
  bind(gen, gen_inv, "--out,--data", "run.data_root", "Output dataset directory");
  bind(gen, gen_inv, "--height", "data.height", "Image height");
  bind(gen, gen_inv, "--width", "data.width", "Image width");

  auto* tr = app.add_subcommand("train", "Run one training stage");
  common_options(tr, train_inv);
  bind(tr, train_inv, "--stage", "train.stage", "Training stage (1 or 2)");
  bind(tr, train_inv, "--variant", "run.variant", "Ablation preset (full, wo-srm, wo-concat, mask2bbox, vton-only, vtoff-only)");
  bind(tr, train_inv, "--data", "run.data_root", "Dataset root");
  bind(tr, train_inv, "--out", "run.out_dir", "Output directory for checkpoints and logs");
  bind(tr, train_inv, "--resume", "run.checkpoint", "Checkpoint to start from (required for stage 2)");
  bind(tr, train_inv, "--steps", "train.steps", "Optimisation steps");
  bind(tr, train_inv, "--batch", "train.batch_size", "Batch size");
  bind(tr, train_inv, "--lr", "train.learning_rate", "Base learning rate");
  bind(tr, train_inv, "--warmup", "train.warmup_steps", "Linear warmup steps");
  bind(tr, train_inv, "--vton-ratio", "train.vton_ratio", "Fraction of VTON batches");
  bind(tr, train_inv, "--seed", "train.seed", "Training seed");
  bind(tr, train_inv, "--checkpoint-every", "train.checkpoint_every", "Checkpoint period in steps (0: final only)");
  bind_flag(tr, train_inv, "--stage2-mask-loss", "train.stage2_mask_loss", "Keep the mask loss in stage 2");

  SampleInputs sample_in;
  auto* sm = app.add_subcommand("sample", "Generate one try-on or try-off image");
  common_options(sm, sample_inv);
  bind(sm, sample_inv, "--checkpoint", "run.checkpoint", "Model checkpoint");
  bind(sm, sample_inv, "--task", "sample.task", "vton or vtoff");
  bind(sm, sample_inv, "--steps", "sample.steps", "DDIM steps");
  bind(sm, sample_inv, "--seed", "sample.seed", "Sampler seed");
  bind(sm, sample_inv, "--bbox", "sample.bbox", "VTOFF box x0,y0,x1,y1 (exclusive end) confining generation");
  bind(sm, sample_inv, "--zero-mask-mode", "sample.zero_mask_mode", "generated-half-zero or literal");
  bind(sm, sample_inv, "--variant", "run.variant", "Ablation preset");
  bind(sm, sample_inv, "--data", "run.data_root", "Dataset root (with --index)");
  bind(sm, sample_inv, "--out", "run.out_dir", "Output directory");
  sm->add_option("--person", sample_in.person, "Person image (PNG)");
  sm->add_option("--garment", sample_in.garment, "Garment image (PNG, VTON)");
  sm->add_option("--mask", sample_in.mask, "Person-space garment mask (PNG, VTON)");
  sm->add_option("--category", sample_in.category, "upper, lower or dress");
  sm->add_option("--index", sample_in.index, "Take inputs from dataset sample <index>");

  std::string eval_task;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  common_options(ev, eval_inv);
  bind(ev, eval_inv, "--checkpoint", "run.checkpoint", "Model checkpoint");
  bind(ev, eval_inv, "--data", "run.data_root", "Dataset root");
  bind(ev, eval_inv, "--split", "sample.split", "train, test or all");
  ev->add_option("--task", eval_task, "vton, vtoff or both");
  bind(ev, eval_inv, "--steps", "sample.steps", "DDIM steps");
  bind(ev, eval_inv, "--seed", "sample.seed", "Sampler seed");
  bind(ev, eval_inv, "--max-samples", "sample.max_samples", "Limit the number of samples (0: all)");
  bind(ev, eval_inv, "--variant", "run.variant", "Ablation preset");
  bind(ev, eval_inv, "--out", "run.out_dir", "Report directory");
  bind_flag(ev, eval_inv, "--bbox", "sample.use_bbox", "VTOFF: confine generation to each garment's bounding box");

  int inspect_count = 8;
  auto* in = app.add_subcommand("inspect", "Write per-sample inspection strips or print checkpoint metadata");
  common_options(in, inspect_inv);
  bind(in, inspect_inv, "--data", "run.data_root", "Dataset root");
  bind(in, inspect_inv, "--split", "sample.split", "train, test or all");
  bind(in, inspect_inv, "--checkpoint", "run.checkpoint", "Checkpoint whose metadata to print");
  bind(in, inspect_inv, "--stage", "train.stage", "Training stage whose masks the canvases use (1 or 2)");
  bind(in, inspect_inv, "--out", "run.out_dir", "Output directory");
  in->add_option("--count", inspect_count, "Number of samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << '\n' << app.help();
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(gen_inv);
    if (*tr) return cmd_train(train_inv);
    if (*sm) return cmd_sample(sample_inv, sample_in);
    if (*ev) {
      bool both = false;
      if (eval_task == "both") both = true;
      else if (!eval_task.empty()) eval_inv.settings["sample.task"] = eval_task;
      return cmd_eval(eval_inv, both);
    }
    if (*in) return cmd_inspect(inspect_inv, inspect_count);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    if (const auto nl = msg.find('\n'); nl != std::string::npos) msg = msg.substr(0, nl);
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}
