#include "mega/evolution.hpp"

#include <algorithm>

#include <json.hpp>

namespace mega {

void StageConfig::validate() const {
  if (window < 1) throw ConfigError("stage window must be positive");
  if (min_success < 0.0 || min_success > 1.0) throw ConfigError("min_success must lie in [0, 1]");
  if (fitness_epsilon < 0.0) throw ConfigError("fitness_epsilon must be non-negative");
  if (generation_window < 1) throw ConfigError("generation_window must be positive");
  if (cooldown < 0) throw ConfigError("cooldown must be non-negative");
  if (start_stage < 1 || stage_cap < start_stage) throw ConfigError("need 1 <= start_stage <= stage_cap");
}

StageTracker::StageTracker(int task_count, const StageConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  tasks_.resize(static_cast<std::size_t>(task_count));
  for (auto& t : tasks_) t.stage = cfg.start_stage;
}

int StageTracker::max_stage() const {
  int m = 0;
  for (const auto& t : tasks_) m = std::max(m, t.stage);
  return m;
}

const TaskStage& StageTracker::at(int task_id) const {
  if (task_id < 0 || task_id >= task_count()) throw StructuralError("unknown task " + std::to_string(task_id));
  return tasks_[static_cast<std::size_t>(task_id)];
}

TaskStage& StageTracker::at(int task_id) {
  return const_cast<TaskStage&>(std::as_const(*this).at(task_id));
}

StageChange update_stage(StageTracker& tracker, int task_id, bool episode_success,
                         std::optional<double> generation_best_fitness) {
  const auto& cfg = tracker.config();
  auto& t = tracker.at(task_id);
  t.success_window.push_back(episode_success);
  while (static_cast<int>(t.success_window.size()) > cfg.window) t.success_window.pop_front();
  if (generation_best_fitness) t.best_fitness_history.push_back(*generation_best_fitness);

  if (t.cooldown_remaining > 0) {
    --t.cooldown_remaining;
    return StageChange::unchanged;
  }
  if (t.stage >= cfg.stage_cap) return StageChange::unchanged;
  if (static_cast<int>(t.success_window.size()) < cfg.window) return StageChange::unchanged;

  const auto successes = std::count(t.success_window.begin(), t.success_window.end(), true);
  const double rate = static_cast<double>(successes) / cfg.window;
  if (rate >= cfg.min_success) return StageChange::unchanged;

  // Flat fitness: the best of the last G_w generations beats the one before
  // them by less than epsilon.
  const auto& h = t.best_fitness_history;
  const auto g = static_cast<std::size_t>(cfg.generation_window);
  if (h.size() < g + 1) return StageChange::unchanged;
  const double reference = h[h.size() - g - 1];
  const double recent = *std::max_element(h.end() - static_cast<std::ptrdiff_t>(g), h.end());
  if (recent - reference >= cfg.fitness_epsilon) return StageChange::unchanged;

  t.stage += 1;
  t.cooldown_remaining = cfg.cooldown;
  t.success_window.clear();
  t.best_fitness_history.clear();
  return StageChange::incremented;
}

int purge_stale(TaskPopulation& pop, int stage, int precision, Rng& rng) {
  const auto expected = genotype_length(precision, stage);
  pop.stage = stage;
  pop.precision = precision;
  int replaced = 0;
  for (auto& m : pop.members) {
    if (m.length() != expected || m.precision != precision) {
      m = pop.adopt(random_genotype(precision, stage, rng));
      ++replaced;
    }
  }
  if (replaced > 0) pop.refresh_best();
  return replaced;
}

std::string to_jsonl(const StageEvent& e) {
  nlohmann::json j;
  j["episode"] = e.episode;
  j["task_id"] = e.task_id;
  j["old_stage"] = e.old_stage;
  j["new_stage"] = e.new_stage;
  j["reason"] = e.reason;
  return j.dump();
}

}  // namespace mega
