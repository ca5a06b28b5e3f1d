#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "mega/envs.hpp"

using namespace mega;

TEST_CASE("make_suite") {
  auto a = make_suite("mt4-fixed", 3);
  auto b = make_suite("mt4-fixed", 3);
  REQUIRE(a.size() == 4);
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].layout.waypoints == b[t].layout.waypoints);
    CHECK(a[t].task_id == static_cast<int>(t));
  }
  CHECK(a[0].kind == TaskKind::reach);
  CHECK(a[3].kind == TaskKind::tour3);
  CHECK(make_suite("mt8-rand", 1).size() == 8);
  CHECK(make_suite("mt8-rand", 1)[0].goal_mode == GoalMode::random);
  CHECK_THROWS_AS(make_suite("mt10-fixed", 0), ConfigError);

  for (const auto& name : {"mt4-fixed", "mt4-rand", "mt8-fixed", "mt8-rand"}) {
    auto suite = make_suite(name, 5);
    auto spec = suite_spec(suite);
    Rng rng(1);
    for (const auto& task : suite) {
      for (const auto& w : task.layout.waypoints) CHECK(w.cwiseAbs().maxCoeff() <= 1.0);
      CHECK(task.success_tolerance > 0.0);
      CHECK(observe(reset(task, rng)).size() == spec.obs_dim);
    }
  }
}

TEST_CASE("reset") {
  auto fixed = make_suite("mt4-fixed", 2);
  Rng r1(5), r2(99);
  for (const auto& task : fixed) CHECK(observe(reset(task, r1)) == observe(reset(task, r2)));

  auto rand = make_suite("mt4-rand", 2);
  Rng a(7), b(7);
  for (const auto& task : rand) CHECK(observe(reset(task, a)) == observe(reset(task, b)));
  Rng c(8);
  auto first = observe(reset(rand[0], c));
  auto second = observe(reset(rand[0], c));
  CHECK(first != second);
  CHECK(first.head<2>().isZero());
}

TEST_CASE("step dynamics and rewards") {
  auto suite = make_suite("mt4-fixed", 4);
  Rng rng(1);
  const auto& reach = suite[0];
  auto s = reset(reach, rng);

  auto r = step(reach, s, Eigen::Vector2d::Zero());
  CHECK(r.state.position == s.position);
  CHECK(r.transition.reward == doctest::Approx(-reach.layout.waypoints[0].norm()).epsilon(1e-15));
  CHECK_FALSE(r.transition.done);

  // out-of-range actions are clipped
  auto clipped = step(reach, s, Eigen::Vector2d(5.0, -7.0));
  CHECK(clipped.state.position.isApprox(Eigen::Vector2d(0.1, -0.1)));

  // landing within tolerance of the last waypoint ends the episode
  EnvState near = s;
  near.position = reach.layout.waypoints[0] + Eigen::Vector2d(0.05, 0.0);
  auto done = step(reach, near, Eigen::Vector2d::Zero());
  CHECK(done.transition.success);
  CHECK(done.transition.done);
  CHECK(done.transition.reward == doctest::Approx(5.0 - 0.05));
  CHECK_THROWS_AS(step(reach, done.state, Eigen::Vector2d::Zero()), StructuralError);

  // truncation
  EnvState late = s;
  late.step = reach.episode_length - 1;
  auto trunc = step(reach, late, Eigen::Vector2d::Zero());
  CHECK(trunc.transition.done);
  CHECK_FALSE(trunc.transition.success);

  // obstacle penalty
  const auto& obstacle_task = suite[1];
  EnvState inside = reset(obstacle_task, rng);
  inside.position = obstacle_task.layout.obstacle->center;
  auto penalized = step(obstacle_task, inside, Eigen::Vector2d::Zero());
  const double d = (inside.position - obstacle_task.layout.waypoints[0]).norm();
  CHECK(penalized.transition.reward == doctest::Approx(-d - 1.0));
}

TEST_CASE("scripted controller solves every task") {
  for (const auto& name : {"mt4-fixed", "mt4-rand", "mt8-fixed", "mt8-rand"}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto suite = make_suite(name, seed);
      Rng rng(seed);
      for (const auto& task : suite) {
        auto summary = run_scripted(task, rng);
        CHECK(summary.success);
        CHECK(summary.steps < task.episode_length);
      }
    }
  }
}

TEST_CASE("difficulty ordering under the scripted controller") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto suite = make_suite("mt4-fixed", seed);
    Rng rng(0);
    std::vector<int> steps;
    for (const auto& task : suite) steps.push_back(run_scripted(task, rng).steps);
    CHECK(steps[0] < steps[1]);
    CHECK(steps[1] < steps[2]);
    CHECK(steps[2] < steps[3]);
  }
}

TEST_CASE("trajectory properties under random actions") {
  for (const auto& name : {"mt4-fixed", "mt8-rand"}) {
    auto suite = make_suite(name, 11);
    for (const auto& task : suite) {
      auto run = [&](std::uint64_t seed) {
        Rng rng(seed);
        std::uniform_real_distribution<double> u(-1.5, 1.5);
        std::vector<Transition> traj;
        auto s = reset(task, rng);
        int done_count = 0;
        while (!s.done) {
          Eigen::Vector2d a(u(rng), u(rng));
          auto r = step(task, s, a);
          CHECK(std::abs(r.transition.reward) <= reward_bound(task));
          if (r.transition.success) CHECK(r.transition.done);
          done_count += r.transition.done;
          traj.push_back(r.transition);
          s = r.state;
        }
        CHECK(done_count == 1);
        return traj;
      };
      CHECK(trajectory_csv(run(3)) == trajectory_csv(run(3)));
    }
  }
}

TEST_CASE("exports") {
  auto suite = make_suite("mt4-fixed", 1);
  auto j = nlohmann::json::parse(suite_to_json(suite));
  CHECK(j["tasks"].size() == 4);
  CHECK(j["obs_dim"] == kObsDim);
  CHECK(j["tasks"][1]["obstacle"]["radius"] == 0.15);
  CHECK(j["tasks"][0]["obstacle"].is_null());

  Rng rng(1);
  auto s = reset(suite[0], rng);
  auto r = step(suite[0], s, Eigen::Vector2d(1.0, 0.0));
  auto csv = trajectory_csv({r.transition});
  CHECK(csv.starts_with("step,s0,s1,s2,s3,s4,s5,s6,s7,a0,a1,reward,done,success\n0,0,0,"));
}
