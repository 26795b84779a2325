#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "twgtm/assembly.hpp"
#include "twgtm/model.hpp"
#include "twgtm/training.hpp"

namespace twgtm {

// Run configuration shared by the command-line tool. Files are flat
// `key = value` lines grouped under `[section]` headers; `#` starts a comment.
// Every key is addressed as `section.key` (e.g. `model.dim`).

struct DataSettings {
  int64_t n = 64;
  std::uint64_t seed = 0;
  int64_t height = 64;
  int64_t width = 48;
};

struct SampleSettings {
  Task task = Task::kVtoff;
  int64_t steps = 30;
  std::uint64_t seed = 0;
  std::optional<std::array<int, 4>> bbox;  // x0, y0, x1, y1 (exclusive end)
  bool use_bbox = false;                   // eval: box from each sample's flat mask
  ZeroMaskMode zero_mask_mode = ZeroMaskMode::kGeneratedHalfZero;
  std::string split = "test";
  int64_t max_samples = 0;
  int64_t batch_size = 4;
};

struct RunConfig {
  std::string command;
  std::filesystem::path data_root;
  std::filesystem::path out_dir = "runs";
  std::filesystem::path checkpoint;
  std::string variant = "full";
  DataSettings data;
  ModelConfig model;
  TrainConfig train;
  SampleSettings sample;
};

/// Ablation presets: "full", "wo-srm" (1), "wo-concat" (2), "mask2bbox" (3),
/// "vton-only" (4), "vtoff-only" (5). Numeric aliases "v1".."v5" are accepted.
std::vector<std::string> variant_names();
/// Canonical name for a preset name or alias; throws on unknown names.
std::string canonical_variant(const std::string& name);
/// The key/value bundle a preset applies.
std::map<std::string, std::string> variant_settings(const std::string& name);

/// Parses config text into `section.key -> value`. Rejects malformed lines,
/// duplicate keys and keys outside the known set.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Applies one `section.key = value` setting. Throws on unknown keys or bad values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// All recognised keys, in echo order.
std::vector<std::string> known_keys();
bool is_model_key(const std::string& key);

/// Resolution order: defaults, variant preset, file, explicit settings.
/// The variant is taken from the explicit settings, else the file, else "full".
RunConfig resolve_config(const std::string& command, const std::map<std::string, std::string>& file,
                         const std::map<std::string, std::string>& explicit_settings);

/// Fully resolved config in the file format; parsing it back yields the same config.
std::string config_to_text(const RunConfig& config);
void write_config_echo(const RunConfig& config, const std::filesystem::path& path);

}  // namespace twgtm
