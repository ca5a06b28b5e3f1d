#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sac_cases.hpp"
#include "test_support.hpp"

using namespace mega;
using mega::testing::random_sac_case;

namespace {

Transition make_transition(int obs_dim, double reward, int task, double fill = 0.0) {
  Transition t;
  t.state = Eigen::VectorXd::Constant(obs_dim, fill);
  t.next_state = Eigen::VectorXd::Constant(obs_dim, fill);
  t.action = Eigen::VectorXd::Zero(2);
  t.reward = reward;
  t.task_id = task;
  return t;
}

NetDims small_dims(int state_dim) {
  NetDims d;
  d.state_dim = state_dim;
  d.action_dim = 2;
  d.module_dim = 8;
  d.embed_hidden = 8;
  d.module_hidden = 8;
  return d;
}

// One-state bandit with uniformly random logged actions.
ReplayBuffer bandit_buffer(const std::function<double(const Eigen::VectorXd&)>& reward, Rng& rng) {
  ReplayBuffer buf(1, 2, 5000, 0.1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 5000; ++k) {
    Transition t = make_transition(1, 0.0, 0, 1.0);
    t.action = Eigen::Vector2d(u(rng), u(rng));
    t.reward = reward(t.action);
    buf.push(t, false);
  }
  return buf;
}

}  // namespace

TEST_CASE("config validation") {
  SacConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.gamma = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SacConfig{};
  cfg.initial_alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SacConfig{};
  cfg.buffer_capacity = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("replay buffer") {
  ReplayBuffer buf(3, 2, 4, 0.1);
  for (int k = 0; k < 6; ++k) buf.push(make_transition(3, 10.0 * k, k % 2, k), k == 5);
  CHECK(buf.size() == 4);

  // FIFO: items 0 and 1 were evicted by 4 and 5
  auto b = buf.gather({0, 1, 2, 3});
  CHECK(b.state(0, 0) == 4.0);
  CHECK(b.state(0, 1) == 5.0);
  CHECK(b.state(0, 2) == 2.0);
  CHECK(b.reward[0] == doctest::Approx(4.0));  // scaled by 0.1 at insertion
  CHECK(b.terminal[1] == 1.0);
  CHECK(b.terminal[0] == 0.0);
  CHECK(b.task_id[1] == 1);

  CHECK_THROWS_AS(buf.push(make_transition(2, 0.0, 0), false), StructuralError);
  ReplayBuffer empty(3, 2, 4);
  Rng rng(1);
  CHECK_THROWS_AS(empty.sample(1, rng), StructuralError);
}

TEST_CASE("replay sampling is uniform") {
  ReplayBuffer buf(1, 2, 100);
  for (int k = 0; k < 100; ++k) buf.push(make_transition(1, 0.0, 0, k), false);
  Rng rng(42);
  const int draws = 100000;
  std::vector<int> counts(100, 0);
  for (long i : buf.sample_indices(draws, rng)) ++counts[static_cast<std::size_t>(i)];
  const double p = 0.01;
  const double mean = draws * p;
  const double sigma = std::sqrt(draws * p * (1.0 - p));
  for (int c : counts) CHECK(std::abs(c - mean) <= 5.0 * sigma);
}

TEST_CASE("soft_update") {
  Rng rng(3);
  TwinCritic critic(2, 2, 1, {4}, rng);
  CriticParams other = TwinCritic(2, 2, 1, {4}, rng).online;

  auto target = other;
  soft_update(critic.online, target, 1.0);
  CHECK(target == critic.online);

  target = other;
  soft_update(critic.online, target, 0.0);
  CHECK(target == other);

  DenseLayer<double> one{Mat::Ones(1, 1), Eigen::VectorXd::Ones(1)};
  DenseLayer<double> zero = one.zeros_like();
  Mlp<double> t{{one}}, o{{zero}};
  soft_update(o, t, 0.005);
  CHECK(t.dense[0].weight(0, 0) == doctest::Approx(0.995).epsilon(1e-15));

  CriticParams mismatched = TwinCritic(3, 2, 1, {4}, rng).online;
  CHECK_THROWS_AS(soft_update(critic.online, mismatched, 0.5), StructuralError);
}

TEST_CASE("actor_loss") {
  SUBCASE("zero temperature and constant critic give zero gradients") {
    auto c = random_sac_case(1);
    for (auto* q : {&c.critic.online.q1, &c.critic.online.q2}) {
      q->dense.back().weight.setZero();
      q->dense.back().bias.setConstant(3.0);
    }
    c.alpha.log_alpha = {-INFINITY, -INFINITY};
    auto r = actor_loss(c.batch, c.actor, c.plans, c.critic, c.alpha, c.noise.current, false);
    CHECK(r.loss == doctest::Approx(-3.0).epsilon(1e-14));
    for (const auto* l : r.grads.layers()) {
      CHECK(l->weight.cwiseAbs().maxCoeff() == 0.0);
      CHECK(l->bias.cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SUBCASE("entropy term is linear in alpha") {
    auto c = random_sac_case(2);
    auto loss_at = [&](double a) {
      c.alpha.log_alpha = {std::log(a), std::log(a)};
      if (a == 0.0) c.alpha.log_alpha = {-INFINITY, -INFINITY};
      return actor_loss(c.batch, c.actor, c.plans, c.critic, c.alpha, c.noise.current, false).loss;
    };
    const double base = loss_at(0.0);
    CHECK(loss_at(0.6) - base == doctest::Approx(2.0 * (loss_at(0.3) - base)).epsilon(1e-12));
  }

  SUBCASE("gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto c = random_sac_case(100 + seed);
      auto r = actor_loss(c.batch, c.actor, c.plans, c.critic, c.alpha, c.noise.current, false);
      auto check = mega::testing::finite_difference_check(c.actor.params(), r.grads, [&] {
        return actor_loss(c.batch, c.actor, c.plans, c.critic, c.alpha, c.noise.current, false).loss;
      });
      CHECK(check.failures == 0);
      CHECK(check.max_rel_error < 1e-4);
    }
  }

  SUBCASE("plan deeper than the network is rejected") {
    auto c = random_sac_case(3);
    c.plans[0] = chain_plan(c.actor.module_count() + 1);
    CHECK_THROWS_AS(actor_loss(c.batch, c.actor, c.plans, c.critic, c.alpha, c.noise.current, false), StructuralError);
    c.plans.pop_back();
    CHECK_THROWS_AS(actor_loss(c.batch, c.actor, c.plans, c.critic, c.alpha, c.noise.current, false), StructuralError);
  }
}

TEST_CASE("critic_loss") {
  SUBCASE("terminal transitions bootstrap nothing") {
    auto c = random_sac_case(4);
    auto r = critic_loss(c.batch, c.critic, c.actor, c.plans, c.alpha, c.gamma, c.noise.next, false);
    const auto last = c.batch.size() - 1;
    REQUIRE(c.batch.terminal[last] == 1.0);
    CHECK(r.target[last] == c.batch.reward[last]);
  }

  SUBCASE("gamma zero ignores the next state") {
    auto c = random_sac_case(5);
    auto r = critic_loss(c.batch, c.critic, c.actor, c.plans, c.alpha, 0.0, c.noise.next, false);
    c.batch.next_state.setRandom();
    auto r2 = critic_loss(c.batch, c.critic, c.actor, c.plans, c.alpha, 0.0, c.noise.next, false);
    CHECK(r.target == c.batch.reward);
    CHECK(r2.target == r.target);
  }

  SUBCASE("gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto c = random_sac_case(200 + seed);
      auto r = critic_loss(c.batch, c.critic, c.actor, c.plans, c.alpha, c.gamma, c.noise.next, false);
      auto check = mega::testing::finite_difference_check(c.critic.online, r.grads, [&] {
        return critic_loss(c.batch, c.critic, c.actor, c.plans, c.alpha, c.gamma, c.noise.next, false).loss;
      });
      CHECK(check.failures == 0);
    }
  }
}

TEST_CASE("alpha_loss") {
  const double target = -2.0;
  SUBCASE("stationary at the target entropy") {
    Eigen::RowVectorXd lp = Eigen::RowVectorXd::Constant(5, -target);
    CHECK(alpha_loss(lp, std::log(0.3), target).grad == 0.0);
  }
  SUBCASE("low entropy raises alpha") {
    Eigen::RowVectorXd lp = Eigen::RowVectorXd::Constant(5, 4.0);  // entropy -4 < -2
    double log_alpha = std::log(0.3);
    const auto r = alpha_loss(lp, log_alpha, target);
    CHECK(r.grad < 0.0);
    ScalarAdam opt(1e-4);
    opt.step(log_alpha, r.grad);
    CHECK(log_alpha > std::log(0.3));
  }
  SUBCASE("one Adam step on a two-sample batch") {
    Eigen::RowVectorXd lp(2);
    lp << 1.5, 3.5;
    const double a = 0.5;
    // loss = -a * mean(lp + target) = -0.5 * 0.5 = -0.25 and d/dlog_alpha equals it
    const auto r = alpha_loss(lp, std::log(a), target);
    CHECK(r.loss == doctest::Approx(-0.25).epsilon(1e-15));
    CHECK(r.grad == doctest::Approx(-0.25).epsilon(1e-15));
    // First Adam step: m_hat = g, v_hat = g^2, so the move is lr * g / (|g| + eps).
    double log_alpha = std::log(a);
    ScalarAdam opt(1e-4);
    opt.step(log_alpha, r.grad);
    CHECK(log_alpha == doctest::Approx(std::log(a) + 1e-4 * 0.25 / (0.25 + 1e-8)).epsilon(1e-14));
  }
}

TEST_CASE("train_step") {
  SacConfig cfg;
  cfg.batch_size = 16;
  cfg.critic_hidden = {16, 16};

  SUBCASE("underfilled buffer is skipped") {
    Rng rng(1);
    SacAgent agent(ModularActorNet<double>(small_dims(1), 1, rng), 1, 1, cfg, rng);
    ReplayBuffer buf(1, 2, 100);
    for (int k = 0; k < 15; ++k) buf.push(make_transition(1, 1.0, 0), false);
    const auto before = agent.actor();
    CHECK_FALSE(agent.train_step(buf, {chain_plan(1)}, rng));
    CHECK(agent.actor() == before);
    CHECK(agent.updates() == 0);
  }

  SUBCASE("deterministic under a fixed seed") {
    auto run = [&] {
      Rng rng(9);
      SacAgent agent(ModularActorNet<double>(small_dims(4), 2, rng), 4, 2, cfg, rng);
      ReplayBuffer buf(4, 2, 1000);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (int k = 0; k < 200; ++k) {
        Transition t = make_transition(4, u(rng), k % 2);
        t.state = Eigen::VectorXd::NullaryExpr(4, [&] { return u(rng); });
        t.action = Eigen::VectorXd::NullaryExpr(2, [&] { return u(rng); });
        buf.push(t, k % 17 == 0);
      }
      const std::vector<WeightPlan> plans{chain_plan(1), chain_plan(2)};
      std::string log;
      for (int k = 0; k < 50; ++k) log += to_jsonl(*agent.train_step(buf, plans, rng));
      return log;
    };
    const auto a = run();
    CHECK(a == run());
    CHECK(a.find("\"entropy\"") != std::string::npos);
  }

  SUBCASE("target critic moves only through soft updates") {
    Rng rng(2);
    SacAgent agent(ModularActorNet<double>(small_dims(1), 1, rng), 1, 1, cfg, rng);
    auto buf = bandit_buffer([](const Eigen::VectorXd&) { return 1.0; }, rng);
    auto expected = agent.critic().target;
    agent.train_step(buf, {chain_plan(1)}, rng);
    soft_update(agent.critic().online, expected, cfg.tau);
    CHECK(agent.critic().target == expected);
  }
}

TEST_CASE("bandit Q converges to the discounted fixed point") {
  SacConfig cfg;
  cfg.gamma = 0.5;
  cfg.batch_size = 64;
  cfg.critic_hidden = {32, 32};
  cfg.initial_alpha = 1e-12;
  cfg.learn_alpha = false;
  Rng rng(5);
  SacAgent agent(ModularActorNet<double>(small_dims(1), 1, rng), 1, 1, cfg, rng);
  auto buf = bandit_buffer([](const Eigen::VectorXd&) { return 1.0; }, rng);
  for (int k = 0; k < 5000; ++k) agent.train_step(buf, {chain_plan(1)}, rng);

  const double expected = 0.1 * 1.0 / (1.0 - cfg.gamma);
  const auto batch = buf.sample(256, rng);
  const Mat x = agent.critic().input(batch.state, batch.task_id, batch.action);
  const double q1 = agent.critic().online.q1.forward(x).mean();
  const double q2 = agent.critic().online.q2.forward(x).mean();
  CHECK(q1 == doctest::Approx(expected).epsilon(0.01));
  CHECK(q2 == doctest::Approx(expected).epsilon(0.01));
}

TEST_CASE("entropy settles near the target on an action-dependent bandit") {
  SacConfig cfg;
  cfg.gamma = 0.5;
  cfg.batch_size = 64;
  cfg.critic_hidden = {32, 32};
  cfg.initial_alpha = 1.0;
  cfg.alpha_lr = 3e-3;
  Rng rng(6);
  SacAgent agent(ModularActorNet<double>(small_dims(1), 1, rng), 1, 1, cfg, rng);
  auto buf = bandit_buffer([](const Eigen::VectorXd& a) { return -10.0 * a.squaredNorm(); }, rng);
  double entropy = 0.0;
  int tail = 0;
  for (int k = 0; k < 8000; ++k) {
    const auto m = agent.train_step(buf, {chain_plan(1)}, rng);
    REQUIRE(m);
    CHECK(m->alpha[0] > 0.0);
    if (k >= 7000) {
      entropy += m->entropy[0];
      ++tail;
    }
  }
  entropy /= tail;
  CHECK(std::abs(entropy - agent.alpha().target_entropy) <= 0.5);
}

TEST_CASE("long run stays finite on the toy suite") {
  SacConfig cfg;
  cfg.batch_size = 32;
  cfg.critic_hidden = {32, 32};
  Rng rng(7);
  auto suite = make_suite("mt4-fixed", 7);
  SacAgent agent(ModularActorNet<double>(small_dims(kObsDim), 3, rng), kObsDim, 4, cfg, rng);
  ReplayBuffer buf(kObsDim, kActionDim, 20000);
  const std::vector<WeightPlan> plans(4, chain_plan(3));
  int steps = 0;
  while (steps < 10000) {
    for (const auto& task : suite) {
      auto s = reset(task, rng);
      while (!s.done && steps < 10000) {
        const auto a = agent.act(observe(s), task.task_id, plans[0], false, rng);
        auto r = step(task, s, a);
        buf.push(r.transition, r.transition.success);
        s = r.state;
        ++steps;
        if (const auto m = agent.train_step(buf, plans, rng)) {
          REQUIRE(std::isfinite(m->critic_loss));
          REQUIRE(std::isfinite(m->actor_loss));
        }
      }
    }
  }
  CHECK(all_finite(agent.actor().params()));
  CHECK(all_finite(agent.critic().online));
}
