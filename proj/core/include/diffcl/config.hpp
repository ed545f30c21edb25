#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "diffcl/dataset.hpp"
#include "diffcl/graph.hpp"
#include "diffcl/model.hpp"
#include "diffcl/trainer.hpp"

namespace diffcl {

enum class DataSource { kSynth, kPrepared };

struct RunConfig {
  // [data]
  std::string dataset_name = "synth";
  DataSource source = DataSource::kSynth;
  std::filesystem::path interactions;   // raw input for `prepare`
  std::filesystem::path prepared_dir = "data/prepared";
  std::filesystem::path visual_features;   // default: <prepared_dir>/visual.f32
  std::filesystem::path textual_features;  // default: <prepared_dir>/textual.f32
  std::filesystem::path knn_cache_dir;     // empty: no cache
  std::size_t min_degree = 5;
  SplitRatios split{};
  SplitMode split_mode = SplitMode::kPerUser;
  std::uint64_t split_seed = 2024;

  // [synth]
  SynthOptions synth{};
  std::uint64_t synth_seed = 7;

  // [model], [diffusion], [loss]
  ModelOptions model{};
  KnnOptions knn{};

  // [train]
  TrainOptions train{};

  // [variant]
  VariantMask variant{};

  // [output]
  std::filesystem::path output_dir = "runs/default";
  bool save_checkpoint = true;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// Parses `[section]` headers and `key = value` lines; '#' starts a
/// comment. Unknown sections or keys, duplicate keys and malformed values
/// raise ConfigError naming the line.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Applies one `section.key=value` override.
void apply_override(RunConfig& config, std::string_view assignment);
/// Sets `section.key` to `value`.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& config, std::string_view key);

/// Every key with its current value, in file format. parse_config of the
/// result reproduces the config.
std::string dump_config(const RunConfig& config);

/// All known `section.key` names in dump order.
std::vector<std::string> config_keys();

}  // namespace diffcl
