#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "diffcl/config.hpp"
#include "diffcl/dataset.hpp"
#include "diffcl/eval.hpp"
#include "diffcl/trainer.hpp"

namespace diffcl {

// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitData = 2,
  kExitDivergence = 3,
};

/// Maps the in-flight exception to an exit code (call inside a catch).
int exit_code_for_current_exception();

/// Git blob hash: SHA-1 over "blob <size>\0" + contents, lowercase hex.
std::string git_blob_sha1(std::string_view contents);
std::string git_blob_sha1_file(const std::filesystem::path& path);

struct LoadedData {
  InteractionDataset dataset;
  ModalityFeatures features;
  IdMaps ids;
  // Input name -> git blob hash.
  std::map<std::string, std::string> input_hashes;
  // Hash over the canonical serialization of splits and features.
  std::string fingerprint;
};

/// Synthesizes or reads the prepared dataset the config names.
LoadedData load_data(const RunConfig& config);

struct PrepareResult {
  DatasetStats stats;
  std::filesystem::path manifest;
};
/// 5-core filters and splits data.interactions into data.prepared_dir.
PrepareResult cmd_prepare(const RunConfig& config);

/// Writes a synthetic dataset into data.prepared_dir in prepared form, plus
/// the unsplit interactions.tsv.
PrepareResult cmd_synth(const RunConfig& config);

struct RunMetrics {
  std::string dataset;
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::vector<std::size_t> ks;
  std::vector<double> recall;
  std::vector<double> ndcg;

  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

/// {dataset, variant, seed, epoch, R@k..., N@k...}; no timestamps.
std::string metrics_json(const RunMetrics& metrics);
std::string metrics_csv_header(const RunMetrics& metrics);
std::string metrics_csv_row(const RunMetrics& metrics);

struct TrainOutcome {
  RunMetrics test;
  RunMetrics validation;
  std::filesystem::path run_dir;
};

/// Trains into output.dir: metrics.json/csv (test split, best epoch),
/// history.csv, manifest.json, config.ini and checkpoint/.
TrainOutcome cmd_train(const RunConfig& config);
/// Same without the manifest, with data already loaded and an explicit run
/// directory.
TrainOutcome train_run(const RunConfig& config, const LoadedData& data,
                       const std::filesystem::path& run_dir);

/// Re-evaluates the checkpoint in output.dir on the test split and writes
/// eval_metrics.json.
RunMetrics cmd_eval(const RunConfig& config);

struct AblationRow {
  std::string variant;
  RunMetrics metrics;
};
/// Trains all eight variants into output.dir/<variant>/ and writes
/// ablation.csv plus one manifest.json.
std::vector<AblationRow> cmd_ablate(const RunConfig& config);

struct SweepRow {
  std::string value;
  RunMetrics metrics;
};
/// One training run per value of `key` into output.dir/<key>=<value>/;
/// writes sweep.csv and manifest.json.
std::vector<SweepRow> cmd_sweep(const RunConfig& config, const std::string& key,
                                const std::vector<std::string>& values);

/// The loss-weight grid {0.01, 0.1, 0.2, ..., 1.0}.
std::vector<std::string> default_sweep_grid();

}  // namespace diffcl
