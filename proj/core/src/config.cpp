#include "diffcl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <set>

#include <spdlog/fmt/fmt.h>

#include "diffcl/data_io.hpp"
#include "diffcl/error.hpp"

namespace diffcl {

namespace {

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::uint64_t parse_u64(std::string_view v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) {
    throw ConfigError(fmt::format("expected a non-negative integer, got '{}'", v));
  }
  return out;
}

double parse_double(std::string_view v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty() || !std::isfinite(out)) {
    throw ConfigError(fmt::format("expected a finite number, got '{}'", v));
  }
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(fmt::format("expected a boolean, got '{}'", v));
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = v.find(',');
    out.push_back(trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Get>
Field size_field(std::string key, Get get) {
  return {std::move(key),
          [get](RunConfig& c, std::string_view v) { get(c) = parse_u64(v); },
          [get](const RunConfig& c) { return fmt::format("{}", get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field double_field(std::string key, Get get) {
  return {std::move(key),
          [get](RunConfig& c, std::string_view v) { get(c) = parse_double(v); },
          [get](const RunConfig& c) { return fmt::format("{}", get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field bool_field(std::string key, Get get) {
  return {std::move(key),
          [get](RunConfig& c, std::string_view v) { get(c) = parse_bool(v); },
          [get](const RunConfig& c) {
            return std::string(get(const_cast<RunConfig&>(c)) ? "true" : "false");
          }};
}

template <class Get>
Field string_field(std::string key, Get get) {
  return {std::move(key),
          [get](RunConfig& c, std::string_view v) { get(c) = std::string(v); },
          [get](const RunConfig& c) { return std::string(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field path_field(std::string key, Get get) {
  return {std::move(key),
          [get](RunConfig& c, std::string_view v) { get(c) = std::filesystem::path(v); },
          [get](const RunConfig& c) { return get(const_cast<RunConfig&>(c)).string(); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("data.name", [](RunConfig& c) -> auto& { return c.dataset_name; }));
    f.push_back({"data.source",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "synth") {
                     c.source = DataSource::kSynth;
                   } else if (v == "prepared") {
                     c.source = DataSource::kPrepared;
                   } else {
                     throw ConfigError(fmt::format("expected synth or prepared, got '{}'", v));
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.source == DataSource::kSynth ? "synth" : "prepared");
                 }});
    f.push_back(path_field("data.interactions", [](RunConfig& c) -> auto& { return c.interactions; }));
    f.push_back(path_field("data.prepared_dir", [](RunConfig& c) -> auto& { return c.prepared_dir; }));
    f.push_back(path_field("data.visual_features",
                           [](RunConfig& c) -> auto& { return c.visual_features; }));
    f.push_back(path_field("data.textual_features",
                           [](RunConfig& c) -> auto& { return c.textual_features; }));
    f.push_back(path_field("data.knn_cache_dir", [](RunConfig& c) -> auto& { return c.knn_cache_dir; }));
    f.push_back(size_field("data.min_degree", [](RunConfig& c) -> auto& { return c.min_degree; }));
    f.push_back({"data.split",
                 [](RunConfig& c, std::string_view v) {
                   const auto parts = split_list(v);
                   if (parts.size() != 3) {
                     throw ConfigError(fmt::format("expected train,validation,test ratios, got '{}'", v));
                   }
                   c.split = {parse_double(parts[0]), parse_double(parts[1]), parse_double(parts[2])};
                 },
                 [](const RunConfig& c) {
                   return fmt::format("{},{},{}", c.split.train, c.split.validation, c.split.test);
                 }});
    f.push_back({"data.split_mode",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "per_user") {
                     c.split_mode = SplitMode::kPerUser;
                   } else if (v == "global") {
                     c.split_mode = SplitMode::kGlobal;
                   } else {
                     throw ConfigError(fmt::format("expected per_user or global, got '{}'", v));
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.split_mode == SplitMode::kPerUser ? "per_user" : "global");
                 }});
    f.push_back(size_field("data.split_seed", [](RunConfig& c) -> auto& { return c.split_seed; }));

    f.push_back(size_field("synth.seed", [](RunConfig& c) -> auto& { return c.synth_seed; }));
    f.push_back(size_field("synth.blocks", [](RunConfig& c) -> auto& { return c.synth.block_count; }));
    f.push_back(size_field("synth.users_per_block",
                           [](RunConfig& c) -> auto& { return c.synth.users_per_block; }));
    f.push_back(size_field("synth.items_per_block",
                           [](RunConfig& c) -> auto& { return c.synth.items_per_block; }));
    f.push_back(size_field("synth.interactions_per_user",
                           [](RunConfig& c) -> auto& { return c.synth.interactions_per_user; }));
    f.push_back(double_field("synth.noise_rate", [](RunConfig& c) -> auto& { return c.synth.noise_rate; }));
    f.push_back(double_field("synth.item_skew", [](RunConfig& c) -> auto& { return c.synth.item_skew; }));
    f.push_back(size_field("synth.visual_dim", [](RunConfig& c) -> auto& { return c.synth.visual_dim; }));
    f.push_back(size_field("synth.textual_dim", [](RunConfig& c) -> auto& { return c.synth.textual_dim; }));
    f.push_back(double_field("synth.feature_jitter",
                             [](RunConfig& c) -> auto& { return c.synth.feature_jitter; }));

    f.push_back(size_field("model.dim", [](RunConfig& c) -> auto& { return c.model.embedding_dim; }));
    f.push_back(size_field("model.layers", [](RunConfig& c) -> auto& { return c.model.layers; }));
    f.push_back(double_field("model.dropout", [](RunConfig& c) -> auto& { return c.model.dropout; }));
    f.push_back(double_field("model.id_init_std", [](RunConfig& c) -> auto& { return c.model.id_init_std; }));
    f.push_back(size_field("model.knn_k", [](RunConfig& c) -> auto& { return c.knn.k; }));
    f.push_back(bool_field("model.knn_symmetrize", [](RunConfig& c) -> auto& { return c.knn.symmetrize; }));
    f.push_back(size_field("model.ii_layers", [](RunConfig& c) -> auto& { return c.model.ii_layers; }));
    f.push_back({"model.align_rows",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "both") {
                     c.model.align_rows = AlignRows::kBoth;
                   } else if (v == "users") {
                     c.model.align_rows = AlignRows::kUsers;
                   } else if (v == "items") {
                     c.model.align_rows = AlignRows::kItems;
                   } else {
                     throw ConfigError(fmt::format("expected both, users or items, got '{}'", v));
                   }
                 },
                 [](const RunConfig& c) {
                   switch (c.model.align_rows) {
                     case AlignRows::kUsers: return std::string("users");
                     case AlignRows::kItems: return std::string("items");
                     default: return std::string("both");
                   }
                 }});

    f.push_back(size_field("diffusion.steps", [](RunConfig& c) -> auto& { return c.model.schedule.steps; }));
    f.push_back(double_field("diffusion.scale", [](RunConfig& c) -> auto& { return c.model.schedule.scale; }));
    f.push_back(double_field("diffusion.gamma_min",
                             [](RunConfig& c) -> auto& { return c.model.schedule.gamma_min; }));
    f.push_back(double_field("diffusion.gamma_max",
                             [](RunConfig& c) -> auto& { return c.model.schedule.gamma_max; }));
    f.push_back(size_field("diffusion.view_depth", [](RunConfig& c) -> auto& { return c.model.view_depth; }));
    f.push_back(size_field("diffusion.hidden", [](RunConfig& c) -> auto& { return c.model.denoiser_hidden; }));
    f.push_back(size_field("diffusion.time_dim",
                           [](RunConfig& c) -> auto& { return c.model.denoiser_time_dim; }));
    f.push_back(bool_field("diffusion.learned_variance",
                           [](RunConfig& c) -> auto& { return c.model.learned_variance; }));

    f.push_back(double_field("loss.lambda_cl", [](RunConfig& c) -> auto& { return c.model.weights.contrastive; }));
    f.push_back(double_field("loss.lambda_align", [](RunConfig& c) -> auto& { return c.model.weights.alignment; }));
    f.push_back(double_field("loss.lambda_e", [](RunConfig& c) -> auto& { return c.model.weights.regularization; }));
    f.push_back(double_field("loss.lambda_diff", [](RunConfig& c) -> auto& { return c.model.weights.diffusion; }));
    f.push_back(double_field("loss.temperature", [](RunConfig& c) -> auto& { return c.model.weights.temperature; }));

    f.push_back(size_field("train.seed", [](RunConfig& c) -> auto& { return c.train.seed; }));
    f.push_back(size_field("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
    f.push_back(size_field("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    f.push_back(double_field("train.lr", [](RunConfig& c) -> auto& { return c.train.learning_rate; }));
    f.push_back(size_field("train.patience", [](RunConfig& c) -> auto& { return c.train.patience; }));
    f.push_back({"train.eval_ks",
                 [](RunConfig& c, std::string_view v) {
                   c.train.eval_ks.clear();
                   for (auto part : split_list(v)) c.train.eval_ks.push_back(parse_u64(part));
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (auto k : c.train.eval_ks) out += (out.empty() ? "" : ",") + std::to_string(k);
                   return out;
                 }});
    f.push_back(size_field("train.stop_k", [](RunConfig& c) -> auto& { return c.train.stop_k; }));

    f.push_back({"variant.name",
                 [](RunConfig& c, std::string_view v) {
                   const auto mask = parse_variant(v);
                   if (!mask) throw ConfigError(fmt::format("unknown variant '{}'", v));
                   c.variant = *mask;
                 },
                 [](const RunConfig& c) { return c.variant.name(); }});

    f.push_back(path_field("output.dir", [](RunConfig& c) -> auto& { return c.output_dir; }));
    f.push_back(bool_field("output.checkpoint", [](RunConfig& c) -> auto& { return c.save_checkpoint; }));
    return f;
  }();
  return table;
}

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (knn.k == 0) throw ConfigError("model.knn_k must be >= 1");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (train.eval_ks.empty()) throw ConfigError("train.eval_ks must not be empty");
  for (auto k : train.eval_ks) {
    if (k == 0) throw ConfigError("train.eval_ks entries must be >= 1");
  }
  if (std::find(train.eval_ks.begin(), train.eval_ks.end(), train.stop_k) == train.eval_ks.end()) {
    throw ConfigError(fmt::format("train.stop_k={} is not among train.eval_ks", train.stop_k));
  }
  if (!(train.learning_rate >= 0.0)) throw ConfigError("train.lr must be >= 0");
  const double total = split.train + split.validation + split.test;
  if (split.train <= 0.0 || split.validation < 0.0 || split.test < 0.0 ||
      std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("data.split ratios must be non-negative, train > 0, and sum to 1");
  }
  if (min_degree == 0) throw ConfigError("data.min_degree must be >= 1");
  if (source == DataSource::kSynth &&
      (synth.block_count == 0 || synth.users_per_block == 0 || synth.items_per_block == 0 ||
       synth.visual_dim == 0 || synth.textual_dim == 0)) {
    throw ConfigError("synth sizes must be >= 1");
  }
  if (synth.noise_rate < 0.0 || synth.noise_rate > 1.0) {
    throw ConfigError("synth.noise_rate must be in [0, 1]");
  }
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  const Field& f = find_field(key);
  try {
    f.set(config, trim(value));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  }
}

std::string get_config_value(const RunConfig& config, std::string_view key) {
  return find_field(key).get(config);
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(fmt::format("line {}: malformed section header", line_no));
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("line {}: expected key = value", line_no));
    }
    if (section.empty()) throw ConfigError(fmt::format("line {}: key outside a section", line_no));
    const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
    if (!seen.insert(key).second) throw ConfigError(fmt::format("line {}: duplicate key '{}'", line_no, key));
    try {
      set_config_value(base, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  try {
    return parse_config(text, std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(fmt::format("override '{}' is not key=value", assignment));
  }
  set_config_value(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string dump_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += '\n';
      out += "[" + s + "]\n";
      section = s;
    }
    out += fmt::format("{} = {}\n", f.key.substr(dot + 1), f.get(config));
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

}  // namespace diffcl
