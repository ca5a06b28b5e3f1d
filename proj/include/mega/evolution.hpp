#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "mega/ga.hpp"
#include "mega/modular_net.hpp"

namespace mega {

/// Constants of the stall rule that grows a task's module budget.
struct StageConfig {
  int window = 50;             // episodes in the success window
  double min_success = 0.05;   // grow only below this success rate
  double fitness_epsilon = 1;  // absolute best-fitness improvement that counts as progress
  int generation_window = 3;   // generations the improvement is measured over
  int cooldown = 100;          // episodes between two increments of one task
  int start_stage = 3;
  int stage_cap = 8;

  void validate() const;
};

struct TaskStage {
  int stage = 0;
  std::deque<bool> success_window;
  std::vector<double> best_fitness_history;
  int cooldown_remaining = 0;

  bool operator==(const TaskStage&) const = default;
};

class StageTracker {
 public:
  StageTracker() = default;
  StageTracker(int task_count, const StageConfig& cfg);

  const StageConfig& config() const { return cfg_; }
  int stage(int task_id) const { return at(task_id).stage; }
  int max_stage() const;
  int task_count() const { return static_cast<int>(tasks_.size()); }
  const TaskStage& at(int task_id) const;
  TaskStage& at(int task_id);

 private:
  StageConfig cfg_;
  std::vector<TaskStage> tasks_;
};

enum class StageChange { unchanged, incremented };

/// Records one finished episode and grows the task's stage when it has
/// stalled: cooldown elapsed, window full, success rate below the minimum
/// and best fitness flat over the last generations.
StageChange update_stage(StageTracker& tracker, int task_id, bool episode_success,
                         std::optional<double> generation_best_fitness);

/// Adds modules until the network covers the largest task stage.
template <typename Scalar>
int sync_network(const StageTracker& tracker, ModularActorNet<Scalar>& net, Rng& init_rng) {
  int added = 0;
  while (net.module_count() < tracker.max_stage()) {
    net.add_module(init_rng);
    ++added;
  }
  return added;
}

/// Replaces every member whose length does not fit `stage` with a random
/// genotype of the right length; returns the number replaced.
int purge_stale(TaskPopulation& pop, int stage, int precision, Rng& rng);

struct StageEvent {
  long episode = 0;
  int task_id = 0;
  int old_stage = 0;
  int new_stage = 0;
  std::string reason;
};

std::string to_jsonl(const StageEvent& e);

}  // namespace mega
