// diffcl: prepare data, train, evaluate, ablate and sweep from a config file.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "diffcl/commands.hpp"
#include "diffcl/config.hpp"
#include "diffcl/error.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool dump = false;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "Config file (sectioned key = value)");
  app->add_option("-s,--set", c.overrides, "Override a key: section.key=value")
      ->take_all();
  app->add_flag("--dump-config", c.dump, "Print the effective config and exit");
  app->add_flag("-q,--quiet", c.quiet, "Only log warnings and errors");
}

diffcl::RunConfig resolve(const Common& c) {
  diffcl::RunConfig cfg;
  if (!c.config_path.empty()) cfg = diffcl::load_config(c.config_path);
  for (const auto& o : c.overrides) diffcl::apply_override(cfg, o);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DiffCL multimodal recommender laboratory"};
  app.require_subcommand(1);

  Common common;
  std::string sweep_key;
  std::vector<std::string> sweep_values;

  auto* prepare = app.add_subcommand("prepare", "5-core filter and split an interactions file");
  auto* synth = app.add_subcommand("synth", "Write a synthetic block-structured dataset");
  auto* train = app.add_subcommand("train", "Train one variant and write metrics + checkpoint");
  auto* eval = app.add_subcommand("eval", "Re-evaluate the checkpoint in output.dir");
  auto* ablate = app.add_subcommand("ablate", "Train all eight component variants");
  auto* sweep = app.add_subcommand("sweep", "Train once per value of one config key");
  for (auto* sub : {prepare, synth, train, eval, ablate, sweep}) add_common(sub, common);
  sweep->add_option("--key", sweep_key, "Key to sweep, e.g. loss.lambda_cl")->required();
  sweep->add_option("--values", sweep_values,
                    "Values (default: 0.01,0.1,0.2,...,1.0)")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? diffcl::kExitOk : diffcl::kExitConfig;
  }

  try {
    diffcl::RunConfig cfg = resolve(common);
    if (common.quiet) spdlog::set_level(spdlog::level::warn);
    if (common.dump) {
      std::cout << diffcl::dump_config(cfg);
      return diffcl::kExitOk;
    }
    if (prepare->parsed()) {
      const auto r = diffcl::cmd_prepare(cfg);
      std::cout << r.manifest.string() << "\n";
    } else if (synth->parsed()) {
      const auto r = diffcl::cmd_synth(cfg);
      std::cout << r.manifest.string() << "\n";
    } else if (train->parsed()) {
      const auto r = diffcl::cmd_train(cfg);
      std::cout << diffcl::metrics_json(r.test);
    } else if (eval->parsed()) {
      std::cout << diffcl::metrics_json(diffcl::cmd_eval(cfg));
    } else if (ablate->parsed()) {
      const auto rows = diffcl::cmd_ablate(cfg);
      std::cout << diffcl::metrics_csv_header(rows.front().metrics) << "\n";
      for (const auto& r : rows) std::cout << diffcl::metrics_csv_row(r.metrics) << "\n";
    } else if (sweep->parsed()) {
      if (sweep_values.empty()) sweep_values = diffcl::default_sweep_grid();
      const auto rows = diffcl::cmd_sweep(cfg, sweep_key, sweep_values);
      for (const auto& r : rows) {
        std::cout << sweep_key << "=" << r.value << " " << diffcl::metrics_csv_row(r.metrics)
                  << "\n";
      }
    }
  } catch (...) {
    const int rc = diffcl::exit_code_for_current_exception();
    try {
      throw;
    } catch (const std::exception& e) {
      spdlog::error("{}", e.what());
    } catch (...) {
      spdlog::error("unknown error");
    }
    return rc;
  }
  return diffcl::kExitOk;
}
