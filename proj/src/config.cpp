#include "twgtm/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace twgtm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

int64_t to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw std::invalid_argument(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  std::uint64_t out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

struct Entry {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Field>
Entry int_entry(const std::string& key, Field RunConfig::*group, int64_t Field::*field) {
  return {[=](RunConfig& c, const std::string& v) { c.*group.*field = to_int(key, v); },
          [=](const RunConfig& c) { return std::to_string(c.*group.*field); }};
}

template <typename Field>
Entry u64_entry(const std::string& key, Field RunConfig::*group, std::uint64_t Field::*field) {
  return {[=](RunConfig& c, const std::string& v) { c.*group.*field = to_u64(key, v); },
          [=](const RunConfig& c) { return std::to_string(c.*group.*field); }};
}

template <typename Field>
Entry double_entry(const std::string& key, Field RunConfig::*group, double Field::*field) {
  return {[=](RunConfig& c, const std::string& v) { c.*group.*field = to_double(key, v); },
          [=](const RunConfig& c) { return fmt(c.*group.*field); }};
}

template <typename Field>
Entry bool_entry(const std::string& key, Field RunConfig::*group, bool Field::*field) {
  return {[=](RunConfig& c, const std::string& v) { c.*group.*field = to_bool(key, v); },
          [=](const RunConfig& c) { return fmt(c.*group.*field); }};
}

Entry path_entry(std::filesystem::path RunConfig::*field) {
  return {[=](RunConfig& c, const std::string& v) { c.*field = v; },
          [=](const RunConfig& c) { return (c.*field).string(); }};
}

using Registry = std::vector<std::pair<std::string, Entry>>;

const Registry& registry() {
  static const Registry r = [] {
    Registry r;
    auto add = [&](const std::string& key, Entry e) { r.emplace_back(key, std::move(e)); };
    add("run.data_root", path_entry(&RunConfig::data_root));
    add("run.out_dir", path_entry(&RunConfig::out_dir));
    add("run.checkpoint", path_entry(&RunConfig::checkpoint));
    add("run.variant", {[](RunConfig& c, const std::string& v) { c.variant = canonical_variant(v); },
                        [](const RunConfig& c) { return c.variant; }});

    add("data.n", int_entry("data.n", &RunConfig::data, &DataSettings::n));
    add("data.seed", u64_entry("data.seed", &RunConfig::data, &DataSettings::seed));
    add("data.height", int_entry("data.height", &RunConfig::data, &DataSettings::height));
    add("data.width", int_entry("data.width", &RunConfig::data, &DataSettings::width));

    add("model.image_height", int_entry("model.image_height", &RunConfig::model, &ModelConfig::image_height));
    add("model.image_width", int_entry("model.image_width", &RunConfig::model, &ModelConfig::image_width));
    add("model.codec_factor",
        {[](RunConfig& c, const std::string& v) { c.model.codec_factor = static_cast<int>(to_int("model.codec_factor", v)); },
         [](const RunConfig& c) { return std::to_string(c.model.codec_factor); }});
    add("model.spatial_concat", bool_entry("model.spatial_concat", &RunConfig::model, &ModelConfig::spatial_concat));
    add("model.extended_attention",
        bool_entry("model.extended_attention", &RunConfig::model, &ModelConfig::extended_attention));
    add("model.native_crossattn", bool_entry("model.native_crossattn", &RunConfig::model, &ModelConfig::native_crossattn));
    add("model.dim", int_entry("model.dim", &RunConfig::model, &ModelConfig::dim));
    add("model.semantic_queries", int_entry("model.semantic_queries", &RunConfig::model, &ModelConfig::semantic_queries));
    add("model.prompt_tokens", int_entry("model.prompt_tokens", &RunConfig::model, &ModelConfig::prompt_tokens));
    add("model.qformer_depth", int_entry("model.qformer_depth", &RunConfig::model, &ModelConfig::qformer_depth));
    add("model.task_queries", int_entry("model.task_queries", &RunConfig::model, &ModelConfig::task_queries));
    add("model.taskformer_units", int_entry("model.taskformer_units", &RunConfig::model, &ModelConfig::taskformer_units));
    add("model.heads", int_entry("model.heads", &RunConfig::model, &ModelConfig::heads));
    add("model.unet_widths", {[](RunConfig& c, const std::string& v) {
                                const auto parts = split(v, ',');
                                if (parts.size() != 3) throw std::invalid_argument("model.unet_widths: expected three widths");
                                for (int i = 0; i < 3; ++i) c.model.unet_widths[i] = to_int("model.unet_widths", parts[i]);
                              },
                              [](const RunConfig& c) {
                                const auto& w = c.model.unet_widths;
                                return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," + std::to_string(w[2]);
                              }});
    add("model.res_blocks", int_entry("model.res_blocks", &RunConfig::model, &ModelConfig::res_blocks));
    add("model.num_timesteps", int_entry("model.num_timesteps", &RunConfig::model, &ModelConfig::num_timesteps));
    add("model.beta_start", double_entry("model.beta_start", &RunConfig::model, &ModelConfig::beta_start));
    add("model.beta_end", double_entry("model.beta_end", &RunConfig::model, &ModelConfig::beta_end));

    add("train.stage", {[](RunConfig& c, const std::string& v) {
                          const auto s = to_int("train.stage", v);
                          if (s != 1 && s != 2) throw std::invalid_argument("train.stage: expected 1 or 2");
                          c.train.stage = s == 1 ? Stage::kStage1 : Stage::kStage2;
                        },
                        [](const RunConfig& c) { return std::string(c.train.stage == Stage::kStage1 ? "1" : "2"); }});
    add("train.steps", int_entry("train.steps", &RunConfig::train, &TrainConfig::steps));
    add("train.batch_size", int_entry("train.batch_size", &RunConfig::train, &TrainConfig::batch_size));
    add("train.learning_rate", double_entry("train.learning_rate", &RunConfig::train, &TrainConfig::learning_rate));
    add("train.warmup_steps", int_entry("train.warmup_steps", &RunConfig::train, &TrainConfig::warmup_steps));
    add("train.weight_decay", double_entry("train.weight_decay", &RunConfig::train, &TrainConfig::weight_decay));
    add("train.lambda_mask", double_entry("train.lambda_mask", &RunConfig::train, &TrainConfig::lambda_mask));
    add("train.lambda_dice", double_entry("train.lambda_dice", &RunConfig::train, &TrainConfig::lambda_dice));
    add("train.lambda_bce", double_entry("train.lambda_bce", &RunConfig::train, &TrainConfig::lambda_bce));
    add("train.vton_ratio", double_entry("train.vton_ratio", &RunConfig::train, &TrainConfig::vton_ratio));
    add("train.stage2_mask_loss", bool_entry("train.stage2_mask_loss", &RunConfig::train, &TrainConfig::stage2_mask_loss));
    add("train.seed", u64_entry("train.seed", &RunConfig::train, &TrainConfig::seed));
    add("train.checkpoint_every", int_entry("train.checkpoint_every", &RunConfig::train, &TrainConfig::checkpoint_every));
    add("train.log_every", int_entry("train.log_every", &RunConfig::train, &TrainConfig::log_every));

    add("sample.task", {[](RunConfig& c, const std::string& v) { c.sample.task = parse_task(v); },
                        [](const RunConfig& c) { return to_string(c.sample.task); }});
    add("sample.steps", int_entry("sample.steps", &RunConfig::sample, &SampleSettings::steps));
    add("sample.seed", u64_entry("sample.seed", &RunConfig::sample, &SampleSettings::seed));
    add("sample.bbox", {[](RunConfig& c, const std::string& v) {
                          if (v.empty() || v == "none") {
                            c.sample.bbox.reset();
                            return;
                          }
                          const auto parts = split(v, ',');
                          if (parts.size() != 4) throw std::invalid_argument("sample.bbox: expected x0,y0,x1,y1");
                          std::array<int, 4> box{};
                          for (int i = 0; i < 4; ++i) box[i] = static_cast<int>(to_int("sample.bbox", parts[i]));
                          if (box[0] < 0 || box[1] < 0 || box[2] <= box[0] || box[3] <= box[1]) {
                            throw std::invalid_argument("sample.bbox: need 0 <= x0 < x1 and 0 <= y0 < y1");
                          }
                          c.sample.bbox = box;
                        },
                        [](const RunConfig& c) {
                          if (!c.sample.bbox) return std::string("none");
                          const auto& b = *c.sample.bbox;
                          return std::to_string(b[0]) + "," + std::to_string(b[1]) + "," + std::to_string(b[2]) + "," +
                                 std::to_string(b[3]);
                        }});
    add("sample.use_bbox", bool_entry("sample.use_bbox", &RunConfig::sample, &SampleSettings::use_bbox));
    add("sample.zero_mask_mode",
        {[](RunConfig& c, const std::string& v) {
           if (v == "generated-half-zero") c.sample.zero_mask_mode = ZeroMaskMode::kGeneratedHalfZero;
           else if (v == "literal") c.sample.zero_mask_mode = ZeroMaskMode::kLiteral;
           else throw std::invalid_argument("sample.zero_mask_mode: expected generated-half-zero or literal");
         },
         [](const RunConfig& c) {
           return std::string(c.sample.zero_mask_mode == ZeroMaskMode::kLiteral ? "literal" : "generated-half-zero");
         }});
    add("sample.split", {[](RunConfig& c, const std::string& v) {
                           if (v != "train" && v != "test" && v != "all") {
                             throw std::invalid_argument("sample.split: expected train, test or all");
                           }
                           c.sample.split = v;
                         },
                         [](const RunConfig& c) { return c.sample.split; }});
    add("sample.max_samples", int_entry("sample.max_samples", &RunConfig::sample, &SampleSettings::max_samples));
    add("sample.batch_size", int_entry("sample.batch_size", &RunConfig::sample, &SampleSettings::batch_size));
    return r;
  }();
  return r;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& [k, e] : registry()) {
    if (k == key) return e;
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

struct Preset {
  std::string name;
  std::string alias;
  std::map<std::string, std::string> settings;
};

const std::vector<Preset>& presets() {
  static const std::vector<Preset> p{
      {"full", "v0", {}},
      {"wo-srm", "v1", {{"model.extended_attention", "false"}}},
      {"wo-concat", "v2", {{"model.spatial_concat", "false"}}},
      {"mask2bbox", "v3", {{"sample.use_bbox", "true"}}},
      {"vton-only", "v4", {{"train.vton_ratio", "1"}}},
      {"vtoff-only", "v5", {{"train.vton_ratio", "0"}}},
  };
  return p;
}

}  // namespace

std::vector<std::string> variant_names() {
  std::vector<std::string> out;
  for (const auto& p : presets()) out.push_back(p.name);
  return out;
}

std::string canonical_variant(const std::string& name) {
  for (const auto& p : presets()) {
    if (p.name == name || p.alias == name) return p.name;
  }
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw std::invalid_argument("unknown variant '" + name + "' (known: " + known + ")");
}

std::map<std::string, std::string> variant_settings(const std::string& name) {
  const auto canonical = canonical_variant(name);
  for (const auto& p : presets()) {
    if (p.name == canonical) return p.settings;
  }
  return {};
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::string section;
  std::istringstream is(text);
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument("config line " + std::to_string(number) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
    const auto name = trim(line.substr(0, eq));
    const auto key = section.empty() ? name : section + "." + name;
    find_entry(key);
    if (!out.emplace(key, trim(line.substr(eq + 1))).second) {
      throw std::invalid_argument("config line " + std::to_string(number) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  find_entry(key).set(config, value);
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& item : registry()) out.push_back(item.first);
  return out;
}

bool is_model_key(const std::string& key) { return key.rfind("model.", 0) == 0; }

RunConfig resolve_config(const std::string& command, const std::map<std::string, std::string>& file,
                         const std::map<std::string, std::string>& explicit_settings) {
  RunConfig c;
  c.command = command;
  std::string variant = "full";
  if (auto it = file.find("run.variant"); it != file.end()) variant = it->second;
  if (auto it = explicit_settings.find("run.variant"); it != explicit_settings.end()) variant = it->second;
  c.variant = canonical_variant(variant);
  for (const auto& [k, v] : variant_settings(c.variant)) apply_setting(c, k, v);
  for (const auto& [k, v] : file) apply_setting(c, k, v);
  for (const auto& [k, v] : explicit_settings) apply_setting(c, k, v);
  return c;
}

std::string config_to_text(const RunConfig& config) {
  std::ostringstream os;
  if (!config.command.empty()) os << "# command: " << config.command << '\n';
  std::string section;
  for (const auto& [key, entry] : registry()) {
    const auto dot = key.find('.');
    const auto s = key.substr(0, dot);
    if (s != section) {
      os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    os << key.substr(dot + 1) << " = " << entry.get(config) << '\n';
  }
  return os.str();
}

void write_config_echo(const RunConfig& config, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write config echo '" + path.string() + "'");
  os << config_to_text(config);
}

}  // namespace twgtm
