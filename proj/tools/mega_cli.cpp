#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mega/harness.hpp"

using namespace mega;

namespace {

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    j = nlohmann::json::parse(in);
  }
  RunConfig cfg = RunConfig::from_json(j);
  for (const auto& o : overrides) cfg.merge(parse_override(o));
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Module-evolving multi-task SAC with genotype routing"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train one run and write its artifacts to a directory");
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  train->add_option("--config", config_path, "JSON config; missing keys take defaults")->check(CLI::ExistingFile);
  auto* seed_opt = train->add_option("--seed", seed, "Overrides the config seed");
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--set", overrides, "key=value override, repeatable");

  auto* eval = app.add_subcommand("eval", "Greedy success rates of one or more checkpoints");
  std::vector<std::string> checkpoints;
  int episodes = 10;
  std::string csv_path;
  eval->add_option("--checkpoint", checkpoints, "Checkpoint file; repeat for a spread across seeds")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "Episodes per task")->check(CLI::PositiveNumber);
  eval->add_option("--csv", csv_path, "Also write the table to this file");

  auto* compare = app.add_subcommand("compare", "Per-task final stage difference between two runs");
  std::string run_a, run_b;
  compare->add_option("--a", run_a, "First run directory")->required()->check(CLI::ExistingDirectory);
  compare->add_option("--b", run_b, "Second run directory")->required()->check(CLI::ExistingDirectory);

  auto* dump = app.add_subcommand("dump-genotypes", "Print every genotype of a checkpoint as CSV");
  std::string dump_path;
  dump->add_option("--checkpoint", dump_path, "Checkpoint file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      RunConfig cfg = load_config(config_path, overrides);
      if (*seed_opt) cfg.seed = seed;
      const auto report = run_training(cfg, out_dir);
      std::cout << report.success.to_csv();
      std::cout << "modules " << report.module_count << ", episodes " << report.episodes << ", env steps "
                << report.env_steps << '\n';
    } else if (*eval) {
      std::vector<Checkpoint> loaded;
      for (const auto& p : checkpoints) loaded.push_back(load_checkpoint(p));
      const auto table = evaluate(loaded, episodes);
      std::cout << table.to_csv();
      if (!csv_path.empty()) std::ofstream(csv_path) << table.to_csv();
    } else if (*compare) {
      std::cout << compare_module_usage(run_a, run_b).to_csv();
    } else if (*dump) {
      std::cout << dump_genotypes(load_checkpoint(dump_path));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
