#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mega/envs.hpp"
#include "mega/evolution.hpp"
#include "mega/ga.hpp"
#include "mega/sac.hpp"

namespace mega {

enum class Baseline { mega, mtsac, fixed };

/// Everything a training run depends on. JSON keys are flat; see
/// RunConfig::from_json for the names.
struct RunConfig {
  std::string suite = "mt4-fixed";
  std::uint64_t seed = 0;
  int episodes_per_task = 2000;
  int eval_episodes = 10;

  GaConfig ga;
  int precision = 2;
  SacConfig sac;
  NetDims net{0, 0, 32, 32, 16};
  StageConfig stage;
  double fitness_epsilon_fraction = 0.01;  // of the episode reward range

  bool evolution = true;
  WeightMode decode = WeightMode::half_softmax;
  bool ga_enabled = true;
  Baseline baseline = Baseline::mega;
  int fixed_modules = 16;  // K of the fixed-K baseline

  int warmup_steps = 1000;
  int metrics_every = 1000;   // SAC updates between loss records
  int checkpoint_every = 0;   // episodes; 0 writes only the final checkpoint

  void validate() const;

  /// Applies the keys of `j` on top of the defaults. Unknown keys throw.
  static RunConfig from_json(const nlohmann::json& j);
  /// Applies the keys of `j` on top of this config.
  void merge(const nlohmann::json& j);
  nlohmann::json to_json() const;

  std::string baseline_name() const;
};

/// Parses "key=value" with the value read as JSON when possible, as a
/// string otherwise.
nlohmann::json parse_override(const std::string& assignment);

/// One line of the episode stream.
struct MetricsRecord {
  long episode = 0;
  int task_id = 0;
  double episode_return = 0.0;
  bool success = false;
  std::uint64_t genotype_id = 0;
  std::size_t genotype_length = 0;
  int stage = 0;
  int module_count = 0;
};

std::string to_jsonl(const MetricsRecord& r);

struct SuccessRow {
  int task_id = 0;
  std::string task;
  int episodes = 0;
  double success_rate = 0.0;
  double stdev = 0.0;  // across checkpoints; zero for a single one
};

struct SuccessTable {
  std::vector<SuccessRow> rows;
  double suite_mean = 0.0;
  double suite_stdev = 0.0;

  std::string to_csv() const;
};

/// Training state that survives a run: enough to evaluate, inspect
/// genotypes, or continue sampling from the same streams.
struct Checkpoint {
  RunConfig config;
  ModularActorNet<double> actor;
  TwinCritic critic;
  AlphaState alpha;
  Community community;
  StageTracker tracker;
  long episode = 0;
  long env_steps = 0;
  std::vector<std::string> rng_states;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainingReport {
  std::vector<int> final_stages;
  int module_count = 0;
  long episodes = 0;
  long env_steps = 0;
  SuccessTable success;
};

/// Round-robin training over the suite. Writes config.json,
/// metrics.jsonl, sac_metrics.jsonl, stages.jsonl, timing.csv,
/// checkpoint.bin, success.csv and summary.json into `out_dir`.
TrainingReport run_training(const RunConfig& cfg, const std::filesystem::path& out_dir);

using Policy = std::function<Eigen::VectorXd(const TaskInstance&, const EnvState&)>;

/// Success rate of `policy` over `episodes` per task.
SuccessTable evaluate_policy(const std::vector<TaskInstance>& suite, const Policy& policy, int episodes, Rng& rng);

/// Greedy actor with each task's best genotype.
SuccessTable evaluate(const Checkpoint& ckpt, int episodes_per_task);

/// Per-task mean and stdev across several checkpoints of one suite.
SuccessTable evaluate(const std::vector<Checkpoint>& ckpts, int episodes_per_task);

/// Plan a task uses at evaluation time: its best genotype, or the first
/// member when none has been scored.
WeightPlan evaluation_plan(const Checkpoint& ckpt, int task_id);

struct UsageRow {
  int task_id = 0;
  std::string task;
  int stage_a = 0;
  int stage_b = 0;
  int difference = 0;  // a - b
};

struct UsageComparison {
  std::vector<UsageRow> rows;
  double mean_difference = 0.0;

  std::string to_csv() const;
};

/// Per-task final stage difference between two run directories.
UsageComparison compare_module_usage(const std::filesystem::path& run_a, const std::filesystem::path& run_b);

/// Every genotype of every population as CSV lines.
std::string dump_genotypes(const Checkpoint& ckpt);

}  // namespace mega
