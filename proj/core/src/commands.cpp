#include "diffcl/commands.hpp"

#include <algorithm>
#include <exception>
#include <optional>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>
#include <openssl/evp.h>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "diffcl/data_io.hpp"
#include "diffcl/error.hpp"
#include "diffcl/graph.hpp"
#include "diffcl/tensor_io.hpp"

namespace diffcl {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return kExitConfig;
  } catch (const DataError&) {
    return kExitData;
  } catch (const ShapeError&) {
    return kExitData;
  } catch (const DivergenceError&) {
    return kExitDivergence;
  } catch (const std::invalid_argument&) {
    return kExitConfig;
  } catch (...) {
    return kExitData;
  }
}

std::string git_blob_sha1(std::string_view contents) {
  const std::string header = fmt::format("blob {}", contents.size());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size() + 1);  // keep the NUL
  EVP_DigestUpdate(ctx, contents.data(), contents.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

std::string git_blob_sha1_file(const fs::path& path) { return git_blob_sha1(read_file(path)); }

namespace {

std::string matrix_bytes(const DenseMatrix& m) {
  std::string out = fmt::format("{}x{}:", m.rows(), m.cols());
  const auto* p = reinterpret_cast<const char*>(m.values().data());
  out.append(p, m.size() * sizeof(double));
  return out;
}

std::string split_text(const std::vector<Interaction>& split) {
  std::string out;
  for (const auto& x : split) out += fmt::format("{}\t{}\n", x.user, x.item);
  return out;
}

std::string fingerprint_of(const InteractionDataset& d, const ModalityFeatures& f) {
  std::string blob = fmt::format("users {} items {}\n", d.user_count(), d.item_count());
  blob += split_text(d.train()) + "--\n" + split_text(d.validation()) + "--\n" +
          split_text(d.test()) + "--\n";
  blob += matrix_bytes(f.visual) + matrix_bytes(f.textual);
  return git_blob_sha1(blob);
}

std::vector<std::string> numbered_ids(char prefix, std::size_t n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(fmt::format("{}{}", prefix, k));
  return out;
}

std::vector<Interaction> read_split(const fs::path& path,
                                    const std::unordered_map<std::string, std::size_t>& users,
                                    const std::unordered_map<std::string, std::size_t>& items) {
  std::vector<Interaction> out;
  for (const auto& r : read_interactions(path)) {
    const auto u = users.find(r.user);
    const auto i = items.find(r.item);
    if (u == users.end() || i == items.end()) {
      throw DataError(fmt::format("{}: unknown id in pair ({}, {})", path.string(), r.user, r.item));
    }
    out.push_back({u->second, i->second});
  }
  return out;
}

std::unordered_map<std::string, std::size_t> index_of(const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> out;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (!out.emplace(ids[k], k).second) throw DataError(fmt::format("duplicate id '{}'", ids[k]));
  }
  return out;
}

fs::path feature_path(const RunConfig& c, bool visual) {
  const fs::path& p = visual ? c.visual_features : c.textual_features;
  if (!p.empty()) return p;
  return c.prepared_dir / (visual ? "visual.f32" : "textual.f32");
}

Json stats_json(const DatasetStats& s) {
  return Json{{"users", s.users},
              {"items", s.items},
              {"interactions", s.interactions},
              {"sparsity", s.sparsity}};
}

void write_prepared(const fs::path& dir, const InteractionDataset& d, const IdMaps& ids) {
  write_id_list(dir / "users.txt", ids.users);
  write_id_list(dir / "items.txt", ids.items);
  write_interactions(dir / "train.tsv", d.train(), ids);
  write_interactions(dir / "validation.tsv", d.validation(), ids);
  write_interactions(dir / "test.tsv", d.test(), ids);
}

Json output_hashes(const fs::path& dir, const std::vector<std::string>& names) {
  Json out = Json::object();
  for (const auto& n : names) out[n] = git_blob_sha1_file(dir / n);
  return out;
}

void write_json(const fs::path& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

ItemItemGraph knn_graph(const RunConfig& c, const DenseMatrix& features, const char* modality) {
  if (c.knn_cache_dir.empty()) return build_knn_graph(features, c.knn);
  const fs::path path = c.knn_cache_dir / fmt::format("knn_{}.bin", modality);
  const std::string key = git_blob_sha1(matrix_bytes(features));
  if (auto cached = load_knn_cache(path, c.knn.k, c.knn.symmetrize, key)) {
    spdlog::info("{} item-item graph loaded from {}", modality, path.string());
    return std::move(*cached);
  }
  auto g = build_knn_graph(features, c.knn);
  save_knn_cache(path, g, c.knn.symmetrize, key);
  return g;
}

ModelGraphs model_graphs(const RunConfig& c, const LoadedData& data) {
  const auto& f = data.features;
  if (f.visual.rows() != data.dataset.item_count() ||
      f.textual.rows() != data.dataset.item_count()) {
    throw DataError("feature rows do not match the item count");
  }
  return ModelGraphs{build_norm_adjacency(data.dataset), knn_graph(c, f.visual, "visual"),
                     knn_graph(c, f.textual, "textual")};
}

RunMetrics to_metrics(const RunConfig& c, const RankingResult& r, std::size_t epoch) {
  return RunMetrics{c.dataset_name, c.variant.name(), c.train.seed, epoch, r.ks, r.recall, r.ndcg};
}

Json base_manifest(const char* command, const RunConfig& c, const LoadedData& data) {
  const std::string config_text = dump_config(c);
  Json j;
  j["command"] = command;
  j["seed"] = c.train.seed;
  j["config_sha1"] = git_blob_sha1(config_text);
  j["config"] = config_text;
  Json inputs = Json::object();
  for (const auto& [name, hash] : data.input_hashes) inputs[name] = hash;
  j["inputs"] = inputs;
  j["data_fingerprint"] = data.fingerprint;
  j["data"] = stats_json(dataset_stats(data.dataset));
  return j;
}

}  // namespace

LoadedData load_data(const RunConfig& c) {
  LoadedData out;
  if (c.source == DataSource::kSynth) {
    SynthOptions opts = c.synth;
    opts.ratios = c.split;
    auto synth = synth_dataset(opts, Rng(c.synth_seed));
    out.dataset = std::move(synth.dataset);
    out.features = std::move(synth.features);
    out.ids = {numbered_ids('u', out.dataset.user_count()), numbered_ids('i', out.dataset.item_count())};
  } else {
    const fs::path& dir = c.prepared_dir;
    out.ids.users = read_id_list(dir / "users.txt");
    out.ids.items = read_id_list(dir / "items.txt");
    const auto users = index_of(out.ids.users);
    const auto items = index_of(out.ids.items);
    out.dataset = InteractionDataset(out.ids.users.size(), out.ids.items.size(),
                                     read_split(dir / "train.tsv", users, items),
                                     read_split(dir / "validation.tsv", users, items),
                                     read_split(dir / "test.tsv", users, items));
    for (const char* name : {"users.txt", "items.txt", "train.tsv", "validation.tsv", "test.tsv"}) {
      out.input_hashes[name] = git_blob_sha1_file(dir / name);
    }
    for (bool visual : {true, false}) {
      const fs::path path = feature_path(c, visual);
      const char* modality = visual ? "visual" : "textual";
      const DenseMatrix raw = read_feature_matrix(path);
      fs::path ids_path = path;
      ids_path += ".ids";
      const auto row_ids = fs::exists(ids_path) ? read_id_list(ids_path) : default_row_ids(raw.rows());
      (visual ? out.features.visual : out.features.textual) =
          align_feature_rows(raw, row_ids, out.ids.items, modality);
      out.input_hashes[fmt::format("{}_features", modality)] = git_blob_sha1_file(path);
      if (fs::exists(ids_path)) {
        out.input_hashes[fmt::format("{}_feature_ids", modality)] = git_blob_sha1_file(ids_path);
      }
    }
  }
  out.fingerprint = fingerprint_of(out.dataset, out.features);
  return out;
}

PrepareResult cmd_prepare(const RunConfig& c) {
  c.validate();
  if (c.interactions.empty()) throw ConfigError("data.interactions is required for prepare");
  const auto raw = read_interactions(c.interactions);
  const auto filtered = five_core_filter(raw, c.min_degree);
  const auto dataset =
      split_dataset(filtered.interactions, filtered.ids.users.size(), filtered.ids.items.size(),
                    c.split, Rng(c.split_seed), c.split_mode);
  write_prepared(c.prepared_dir, dataset, filtered.ids);

  PrepareResult out;
  out.stats = dataset_stats(dataset);
  Json j;
  j["command"] = "prepare";
  j["input"] = {{"path", c.interactions.string()},
                {"sha1", git_blob_sha1_file(c.interactions)},
                {"lines", raw.size()}};
  j["min_degree"] = c.min_degree;
  j["split"] = {c.split.train, c.split.validation, c.split.test};
  j["split_mode"] = get_config_value(c, "data.split_mode");
  j["split_seed"] = c.split_seed;
  j["stats"] = stats_json(out.stats);
  j["outputs"] = output_hashes(c.prepared_dir, {"users.txt", "items.txt", "train.tsv",
                                                "validation.tsv", "test.tsv"});
  out.manifest = c.prepared_dir / "manifest.json";
  write_json(out.manifest, j);
  spdlog::info("prepared {} users, {} items, {} interactions (sparsity {:.4f}%)",
               out.stats.users, out.stats.items, out.stats.interactions,
               100.0 * out.stats.sparsity);
  return out;
}

PrepareResult cmd_synth(const RunConfig& config) {
  RunConfig c = config;
  c.source = DataSource::kSynth;
  c.validate();
  const LoadedData data = load_data(c);
  const fs::path& dir = c.prepared_dir;
  write_prepared(dir, data.dataset, data.ids);
  std::vector<Interaction> all = data.dataset.train();
  all.insert(all.end(), data.dataset.validation().begin(), data.dataset.validation().end());
  all.insert(all.end(), data.dataset.test().begin(), data.dataset.test().end());
  std::sort(all.begin(), all.end());
  write_interactions(dir / "interactions.tsv", all, data.ids);
  write_feature_matrix(dir / "visual.f32", data.features.visual);
  write_feature_matrix(dir / "textual.f32", data.features.textual);
  write_id_list(dir / "visual.f32.ids", data.ids.items);
  write_id_list(dir / "textual.f32.ids", data.ids.items);

  PrepareResult out;
  out.stats = dataset_stats(data.dataset);
  Json j;
  j["command"] = "synth";
  j["synth_seed"] = c.synth_seed;
  j["config"] = dump_config(c);
  j["stats"] = stats_json(out.stats);
  j["outputs"] = output_hashes(dir, {"users.txt", "items.txt", "train.tsv", "validation.tsv",
                                     "test.tsv", "interactions.tsv", "visual.f32", "textual.f32",
                                     "visual.f32.ids", "textual.f32.ids"});
  out.manifest = dir / "manifest.json";
  write_json(out.manifest, j);
  return out;
}

double RunMetrics::recall_at(std::size_t k) const {
  for (std::size_t j = 0; j < ks.size(); ++j) {
    if (ks[j] == k) return recall[j];
  }
  throw std::out_of_range(fmt::format("R@{} not recorded", k));
}

double RunMetrics::ndcg_at(std::size_t k) const {
  for (std::size_t j = 0; j < ks.size(); ++j) {
    if (ks[j] == k) return ndcg[j];
  }
  throw std::out_of_range(fmt::format("N@{} not recorded", k));
}

std::string metrics_json(const RunMetrics& m) {
  Json j;
  j["dataset"] = m.dataset;
  j["variant"] = m.variant;
  j["seed"] = m.seed;
  j["epoch"] = m.epoch;
  for (std::size_t k = 0; k < m.ks.size(); ++k) j[fmt::format("R@{}", m.ks[k])] = m.recall[k];
  for (std::size_t k = 0; k < m.ks.size(); ++k) j[fmt::format("N@{}", m.ks[k])] = m.ndcg[k];
  return j.dump(2) + "\n";
}

std::string metrics_csv_header(const RunMetrics& m) {
  std::string out = "dataset,variant,seed,epoch";
  for (auto k : m.ks) out += fmt::format(",R@{}", k);
  for (auto k : m.ks) out += fmt::format(",N@{}", k);
  return out;
}

std::string metrics_csv_row(const RunMetrics& m) {
  std::string out = fmt::format("{},{},{},{}", m.dataset, m.variant, m.seed, m.epoch);
  for (double v : m.recall) out += fmt::format(",{}", v);
  for (double v : m.ndcg) out += fmt::format(",{}", v);
  return out;
}

TrainOutcome train_run(const RunConfig& c, const LoadedData& data, const fs::path& run_dir) {
  c.validate();
  spdlog::info("training variant {} (seed {}) into {}", c.variant.name(), c.train.seed,
               run_dir.string());
  spdlog::info("loss weights: lambda_cl={} lambda_align={} lambda_e={} lambda_diff={} tau={}",
               c.model.weights.contrastive, c.model.weights.alignment,
               c.model.weights.regularization, c.model.weights.diffusion,
               c.model.weights.temperature);
  const ModelGraphs graphs = model_graphs(c, data);
  Trainer trainer(data.dataset, data.features, graphs, c.model, c.train, c.variant);

  std::string history = "epoch,total,bpr,contrastive,alignment,regularization,diffusion";
  for (auto k : c.train.eval_ks) history += fmt::format(",val_R@{}", k);
  for (auto k : c.train.eval_ks) history += fmt::format(",val_N@{}", k);
  history += '\n';
  const FitResult fit = trainer.fit([&](const EpochRecord& r) {
    const auto& l = r.loss;
    history += fmt::format("{},{},{},{},{},{},{}", r.epoch, l.total, l.bpr, l.contrastive,
                           l.alignment, l.regularization, l.diffusion);
    for (double v : r.validation.recall) history += fmt::format(",{}", v);
    for (double v : r.validation.ndcg) history += fmt::format(",{}", v);
    history += '\n';
  });

  TrainOutcome out;
  out.run_dir = run_dir;
  out.test = to_metrics(c, fit.test, fit.best_epoch);
  out.validation = to_metrics(c, fit.best_validation, fit.best_epoch);
  write_file(run_dir / "metrics.json", metrics_json(out.test));
  write_file(run_dir / "metrics.csv",
             metrics_csv_header(out.test) + "\n" + metrics_csv_row(out.test) + "\n");
  write_file(run_dir / "validation_metrics.json", metrics_json(out.validation));
  write_file(run_dir / "history.csv", history);
  write_file(run_dir / "config.ini", dump_config(c));
  if (c.save_checkpoint) {
    Json meta;
    meta["epoch"] = fit.best_epoch;
    meta["variant"] = c.variant.name();
    meta["config_sha1"] = git_blob_sha1(dump_config(c));
    meta["data_fingerprint"] = data.fingerprint;
    meta["test"] = Json::parse(metrics_json(out.test));
    save_checkpoint(run_dir / "checkpoint", trainer.params(), meta.dump());
  }
  spdlog::info("best epoch {}: test {}", fit.best_epoch, metrics_csv_row(out.test));
  return out;
}

TrainOutcome cmd_train(const RunConfig& c) {
  c.validate();
  const LoadedData data = load_data(c);
  TrainOutcome out = train_run(c, data, c.output_dir);
  Json j = base_manifest("train", c, data);
  j["variant"] = c.variant.name();
  j["outputs"] = output_hashes(c.output_dir, {"metrics.json", "metrics.csv", "history.csv"});
  write_json(c.output_dir / "manifest.json", j);
  return out;
}

RunMetrics cmd_eval(const RunConfig& c) {
  c.validate();
  const LoadedData data = load_data(c);
  const ModelGraphs graphs = model_graphs(c, data);
  const ModelShape shape{data.dataset.user_count(), data.dataset.item_count(),
                         data.features.visual.cols(), data.features.textual.cols()};
  DiffClParams params = init_params(shape, c.model, Rng(0));
  const fs::path dir = c.output_dir / "checkpoint";
  load_checkpoint(dir, params);
  const Json meta = Json::parse(read_file(dir / "checkpoint.json")).at("metadata");
  const auto emb = inference_embeddings(params, data.features, graphs, c.model, c.variant);
  const RankingResult r = evaluate_split(predict_all_scores(emb), data.dataset, true, c.train.eval_ks);
  const RunMetrics m = to_metrics(c, r, meta.value("epoch", std::size_t{0}));
  write_file(c.output_dir / "eval_metrics.json", metrics_json(m));
  return m;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& config) {
  config.validate();
  const LoadedData data = load_data(config);
  std::vector<AblationRow> rows;
  std::string csv;
  Json runs = Json::array();
  for (const auto& v : variant_suite()) {
    RunConfig c = config;
    c.variant = v.mask;
    const auto run = train_run(c, data, config.output_dir / v.name);
    if (csv.empty()) csv = metrics_csv_header(run.test) + "\n";
    csv += metrics_csv_row(run.test) + "\n";
    runs.push_back({{"variant", v.name},
                    {"dir", v.name},
                    {"metrics_sha1", git_blob_sha1_file(run.run_dir / "metrics.json")}});
    rows.push_back({v.name, run.test});
  }
  write_file(config.output_dir / "ablation.csv", csv);
  Json j = base_manifest("ablate", config, data);
  j["runs"] = runs;
  j["outputs"] = output_hashes(config.output_dir, {"ablation.csv"});
  write_json(config.output_dir / "manifest.json", j);
  return rows;
}

std::vector<std::string> default_sweep_grid() {
  return {"0.01", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0"};
}

std::vector<SweepRow> cmd_sweep(const RunConfig& config, const std::string& key,
                                const std::vector<std::string>& values) {
  config.validate();
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const bool data_key = key.rfind("data.", 0) == 0 || key.rfind("synth.", 0) == 0;
  if (key.rfind("output.", 0) == 0) throw ConfigError("output keys cannot be swept");
  get_config_value(config, key);  // rejects unknown keys up front

  std::optional<LoadedData> shared;
  if (!data_key) shared = load_data(config);
  std::vector<SweepRow> rows;
  std::string csv;
  Json runs = Json::array();
  for (const auto& value : values) {
    RunConfig c = config;
    set_config_value(c, key, value);
    c.validate();
    const std::string dir_name = fmt::format("{}={}", key, value);
    const auto run = data_key ? train_run(c, load_data(c), config.output_dir / dir_name)
                              : train_run(c, *shared, config.output_dir / dir_name);
    if (csv.empty()) csv = "key,value," + metrics_csv_header(run.test) + "\n";
    csv += fmt::format("{},{},{}\n", key, value, metrics_csv_row(run.test));
    runs.push_back({{"value", value},
                    {"dir", dir_name},
                    {"metrics_sha1", git_blob_sha1_file(run.run_dir / "metrics.json")}});
    rows.push_back({value, run.test});
  }
  write_file(config.output_dir / "sweep.csv", csv);
  Json j = base_manifest("sweep", config, shared ? *shared : load_data(config));
  j["key"] = key;
  j["values"] = values;
  j["runs"] = runs;
  j["outputs"] = output_hashes(config.output_dir, {"sweep.csv"});
  write_json(config.output_dir / "manifest.json", j);
  return rows;
}

}  // namespace diffcl
