#include "mega/envs.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace mega {

namespace {

constexpr double kArenaMargin = 0.85;  // waypoints stay inside [-0.85, 0.85]^2
constexpr double kAvoidMargin = 0.05;

Eigen::Vector2d direction(double angle) { return {std::cos(angle), std::sin(angle)}; }

bool inside_arena(const Eigen::Vector2d& p) { return p.cwiseAbs().maxCoeff() <= kArenaMargin; }

double random_angle(Rng& rng) { return std::uniform_real_distribution<double>(-std::numbers::pi, std::numbers::pi)(rng); }

// Appends waypoints at `leg` distance from the last one, each kept inside
// the arena by rejection.
void extend_tour(Layout& layout, int legs, double leg, Rng& rng) {
  for (int k = 0; k < legs; ++k) {
    const Eigen::Vector2d from = layout.waypoints.back();
    Eigen::Vector2d next;
    do {
      next = from + leg * direction(random_angle(rng));
    } while (!inside_arena(next));
    layout.waypoints.push_back(next);
  }
}

Layout behind_obstacle(double goal_radius, double obstacle_radius, Rng& rng) {
  const Eigen::Vector2d dir = direction(random_angle(rng));
  Layout layout;
  layout.waypoints.push_back(goal_radius * dir);
  layout.obstacle = Obstacle{0.5 * goal_radius * dir, obstacle_radius};
  return layout;
}

const std::vector<TaskKind>& kinds_for(int size) {
  static const std::vector<TaskKind> mt4{TaskKind::reach, TaskKind::obstacle, TaskKind::tour2, TaskKind::tour3};
  static const std::vector<TaskKind> mt8{TaskKind::reach,          TaskKind::obstacle,      TaskKind::tour2,
                                         TaskKind::tour3,          TaskKind::obstacle_large, TaskKind::obstacle_tour,
                                         TaskKind::tour4,          TaskKind::tour3_precise};
  return size == 4 ? mt4 : mt8;
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::reach: return "reach";
    case TaskKind::obstacle: return "reach-around-obstacle";
    case TaskKind::tour2: return "tour-2";
    case TaskKind::tour3: return "tour-3";
    case TaskKind::obstacle_large: return "reach-around-wide-obstacle";
    case TaskKind::obstacle_tour: return "tour-2-obstacle";
    case TaskKind::tour4: return "tour-4";
    case TaskKind::tour3_precise: return "tour-3-precise";
  }
  return "unknown";
}

Layout sample_layout(TaskKind kind, Rng& rng) {
  Layout layout;
  switch (kind) {
    case TaskKind::reach:
      layout.waypoints.push_back(0.4 * direction(random_angle(rng)));
      break;
    case TaskKind::obstacle:
      layout = behind_obstacle(0.7, 0.15, rng);
      break;
    case TaskKind::tour2:
      layout.waypoints.push_back(0.4 * direction(random_angle(rng)));
      extend_tour(layout, 1, 1.2, rng);
      break;
    case TaskKind::tour3:
    case TaskKind::tour3_precise:
      layout.waypoints.push_back(0.4 * direction(random_angle(rng)));
      extend_tour(layout, 2, 1.2, rng);
      break;
    case TaskKind::obstacle_large:
      layout = behind_obstacle(0.8, 0.3, rng);
      break;
    case TaskKind::obstacle_tour:
      layout = behind_obstacle(0.8, 0.2, rng);
      extend_tour(layout, 1, 0.8, rng);
      break;
    case TaskKind::tour4:
      layout.waypoints.push_back(0.4 * direction(random_angle(rng)));
      extend_tour(layout, 3, 0.8, rng);
      break;
  }
  return layout;
}

std::vector<TaskInstance> make_suite(const std::string& name, std::uint64_t seed) {
  int size = 0;
  GoalMode mode = GoalMode::fixed;
  if (name == "mt4-fixed" || name == "mt4-rand") size = 4;
  if (name == "mt8-fixed" || name == "mt8-rand") size = 8;
  if (size == 0) throw ConfigError("unknown suite '" + name + "'");
  if (name.ends_with("-rand")) mode = GoalMode::random;

  std::vector<TaskInstance> suite;
  const auto& kinds = kinds_for(size);
  for (int t = 0; t < size; ++t) {
    TaskInstance task;
    task.task_id = t;
    task.kind = kinds[static_cast<std::size_t>(t)];
    task.goal_mode = mode;
    if (task.kind == TaskKind::tour3_precise) task.success_tolerance = 0.05;
    Rng layout_rng(seed * 1000003ULL + static_cast<std::uint64_t>(t));
    task.layout = sample_layout(task.kind, layout_rng);
    suite.push_back(std::move(task));
  }
  return suite;
}

EnvSpec suite_spec(const std::vector<TaskInstance>& suite) {
  if (suite.empty()) throw ConfigError("empty suite");
  EnvSpec spec;
  spec.obs_dim = kObsDim;
  spec.action_dim = kActionDim;
  spec.episode_length = suite.front().episode_length;
  spec.goal_mode = suite.front().goal_mode;
  return spec;
}

EnvState reset(const TaskInstance& task, Rng& rng) {
  EnvState s;
  s.layout = task.goal_mode == GoalMode::fixed ? task.layout : sample_layout(task.kind, rng);
  return s;
}

Eigen::VectorXd observe(const EnvState& state) {
  Eigen::VectorXd obs = Eigen::VectorXd::Zero(kObsDim);
  const auto& wps = state.layout.waypoints;
  const auto target_index = std::min<std::size_t>(static_cast<std::size_t>(state.next_waypoint), wps.size() - 1);
  obs.segment<2>(0) = state.position;
  obs.segment<2>(2) = wps[target_index];
  obs[4] = static_cast<double>(wps.size()) - state.next_waypoint;
  if (state.layout.obstacle) {
    obs.segment<2>(5) = state.layout.obstacle->center;
    obs[7] = state.layout.obstacle->radius;
  }
  return obs;
}

StepResult step(const TaskInstance& task, const EnvState& state, const Eigen::VectorXd& action) {
  if (state.done) throw StructuralError("step called on a finished episode");
  if (action.size() != kActionDim) throw StructuralError("action has the wrong dimension");

  StepResult out;
  auto& next = out.state;
  next = state;
  const Eigen::Vector2d move = action.cwiseMax(-1.0).cwiseMin(1.0);
  next.position = (state.position + move * task.dt).cwiseMax(-1.0).cwiseMin(1.0);
  next.step += 1;

  const auto& target = state.layout.waypoints[static_cast<std::size_t>(state.next_waypoint)];
  const double distance = (next.position - target).norm();
  double reward = -distance;
  if (distance <= task.success_tolerance) {
    reward += task.capture_bonus;
    next.next_waypoint += 1;
  }
  if (const auto& obs = state.layout.obstacle; obs && (next.position - obs->center).norm() < obs->radius) {
    reward -= task.obstacle_penalty;
  }
  next.success = next.next_waypoint == static_cast<int>(state.layout.waypoints.size());
  next.done = next.success || next.step >= task.episode_length;

  auto& tr = out.transition;
  tr.state = observe(state);
  tr.action = action;
  tr.reward = reward;
  tr.next_state = observe(next);
  tr.done = next.done;
  tr.success = next.success;
  tr.task_id = task.task_id;
  return out;
}

double reward_bound(const TaskInstance& task) {
  return std::max(2.0 * std::numbers::sqrt2 + task.obstacle_penalty, task.capture_bonus);
}

double episode_reward_range(const TaskInstance& task) {
  const double worst = task.episode_length * (2.0 * std::numbers::sqrt2 + task.obstacle_penalty);
  const double best = task.capture_bonus * static_cast<double>(task.layout.waypoints.size());
  return worst + best;
}

Eigen::VectorXd scripted_action(const TaskInstance& task, const EnvState& state) {
  const auto& target = state.layout.waypoints[static_cast<std::size_t>(state.next_waypoint)];
  Eigen::Vector2d heading = target - state.position;
  const double distance = heading.norm();
  if (distance < 1e-12) return Eigen::VectorXd::Zero(kActionDim);
  heading /= distance;

  if (const auto& obs = state.layout.obstacle) {
    const double clearance = obs->radius + kAvoidMargin;
    const Eigen::Vector2d to_center = obs->center - state.position;
    const double along = to_center.dot(heading);
    const double miss = (to_center - along * heading).norm();
    if (along > 0.0 && along < distance && miss < clearance) {
      // Slide along the tangent on the side the target lies.
      const Eigen::Vector2d radial = -to_center.normalized();
      Eigen::Vector2d tangent(-radial.y(), radial.x());
      if (tangent.dot(heading) < 0.0) tangent = -tangent;
      const double gap = to_center.norm() - clearance;
      heading = (tangent + std::max(0.0, -gap) * 10.0 * radial).normalized();
    }
  }
  const double speed = std::min(1.0, distance / task.dt);
  return heading * speed;
}

RolloutSummary run_scripted(const TaskInstance& task, Rng& rng) {
  RolloutSummary summary;
  auto state = reset(task, rng);
  while (!state.done) {
    auto result = step(task, state, scripted_action(task, state));
    summary.episode_return += result.transition.reward;
    state = std::move(result.state);
    ++summary.steps;
  }
  summary.success = state.success;
  return summary;
}

std::string suite_to_json(const std::vector<TaskInstance>& suite) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : suite) {
    nlohmann::json j;
    j["task_id"] = t.task_id;
    j["name"] = t.name();
    j["goal_mode"] = t.goal_mode == GoalMode::fixed ? "fixed" : "random";
    j["success_tolerance"] = t.success_tolerance;
    j["dt"] = t.dt;
    j["episode_length"] = t.episode_length;
    nlohmann::json wps = nlohmann::json::array();
    for (const auto& w : t.layout.waypoints) wps.push_back({w.x(), w.y()});
    j["waypoints"] = wps;
    if (t.layout.obstacle) {
      j["obstacle"] = {{"center", {t.layout.obstacle->center.x(), t.layout.obstacle->center.y()}},
                       {"radius", t.layout.obstacle->radius}};
    } else {
      j["obstacle"] = nullptr;
    }
    tasks.push_back(j);
  }
  return nlohmann::json{{"obs_dim", kObsDim}, {"action_dim", kActionDim}, {"tasks", tasks}}.dump(2);
}

std::string trajectory_csv(const std::vector<Transition>& trajectory) {
  std::ostringstream out;
  out << "step";
  for (int i = 0; i < kObsDim; ++i) out << ",s" << i;
  for (int i = 0; i < kActionDim; ++i) out << ",a" << i;
  out << ",reward,done,success\n";
  char buf[32];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  for (std::size_t k = 0; k < trajectory.size(); ++k) {
    const auto& tr = trajectory[k];
    out << k;
    for (Eigen::Index i = 0; i < tr.state.size(); ++i) out << ',' << num(tr.state[i]);
    for (Eigen::Index i = 0; i < tr.action.size(); ++i) out << ',' << num(tr.action[i]);
    out << ',' << num(tr.reward) << ',' << tr.done << ',' << tr.success << '\n';
  }
  return out.str();
}

}  // namespace mega
