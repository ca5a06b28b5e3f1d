#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mega/genotype.hpp"

namespace mega {

enum class GoalMode { fixed, random };

enum class TaskKind {
  reach,           // one waypoint
  obstacle,        // one waypoint behind an obstacle
  tour2,           // two waypoints
  tour3,           // three waypoints
  obstacle_large,  // far waypoint behind a wide obstacle
  obstacle_tour,   // two waypoints, obstacle on the first leg
  tour4,           // four waypoints
  tour3_precise,   // three waypoints, half the capture tolerance
};

std::string to_string(TaskKind kind);

struct Obstacle {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 0.0;
};

/// Goal geometry of one episode.
struct Layout {
  std::vector<Eigen::Vector2d> waypoints;
  std::optional<Obstacle> obstacle;
};

/// Shared shape of every task in a suite.
struct EnvSpec {
  int obs_dim = 8;
  int action_dim = 2;
  int episode_length = 200;
  GoalMode goal_mode = GoalMode::fixed;
};

/// Point mass in [-1, 1]^2 that must visit waypoints in order.
struct TaskInstance {
  int task_id = 0;
  TaskKind kind = TaskKind::reach;
  GoalMode goal_mode = GoalMode::fixed;
  Layout layout;  // frozen goals; resampled per reset in random mode
  double success_tolerance = 0.1;
  double dt = 0.1;
  int episode_length = 200;
  double capture_bonus = 5.0;
  double obstacle_penalty = 1.0;

  std::string name() const { return to_string(kind); }
};

struct EnvState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Layout layout;
  int next_waypoint = 0;
  int step = 0;
  bool done = false;
  bool success = false;
};

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool done = false;
  bool success = false;
  int task_id = 0;
};

struct StepResult {
  EnvState state;
  Transition transition;
};

inline constexpr int kObsDim = 8;
inline constexpr int kActionDim = 2;

/// mt4-fixed, mt4-rand, mt8-fixed or mt8-rand.
std::vector<TaskInstance> make_suite(const std::string& name, std::uint64_t seed);
EnvSpec suite_spec(const std::vector<TaskInstance>& suite);

Layout sample_layout(TaskKind kind, Rng& rng);

EnvState reset(const TaskInstance& task, Rng& rng);

/// [position, current target, waypoints remaining, obstacle centre, obstacle radius]
Eigen::VectorXd observe(const EnvState& state);

/// Integrates the clipped action and scores the move; truncates at the
/// episode length.
StepResult step(const TaskInstance& task, const EnvState& state, const Eigen::VectorXd& action);

/// Largest |reward| a single step can produce.
double reward_bound(const TaskInstance& task);

/// Width of the reachable episode-return interval.
double episode_reward_range(const TaskInstance& task);

/// Hand-written controller: unit-speed straight lines to each waypoint,
/// sliding around an obstacle that blocks the line.
Eigen::VectorXd scripted_action(const TaskInstance& task, const EnvState& state);

struct RolloutSummary {
  int steps = 0;
  double episode_return = 0.0;
  bool success = false;
};

RolloutSummary run_scripted(const TaskInstance& task, Rng& rng);

std::string suite_to_json(const std::vector<TaskInstance>& suite);

/// CSV header plus one line per transition:
/// step,state...,action...,reward,done,success
std::string trajectory_csv(const std::vector<Transition>& trajectory);

}  // namespace mega
