#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mega/envs.hpp"
#include "mega/layers.hpp"
#include "mega/modular_net.hpp"
#include "mega/squashed_gaussian.hpp"

namespace mega {

using Mat = Matrix<double>;

struct SacConfig {
  double gamma = 0.99;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 1e-4;
  int batch_size = 64;
  long buffer_capacity = 1'000'000;
  double tau = 0.005;
  double reward_scale = 0.1;
  std::vector<int> critic_hidden{64, 64};
  double initial_alpha = 0.1;
  bool learn_alpha = true;
  std::optional<double> target_entropy;  // defaults to -action_dim
  bool actor_task_onehot = false;        // feed the task one-hot to the actor too

  void validate() const;
};

/// Uniformly sampled batch, columns are samples.
struct Batch {
  Mat state;
  Mat action;
  Eigen::RowVectorXd reward;  // already scaled
  Mat next_state;
  Eigen::RowVectorXd terminal;
  std::vector<int> task_id;

  Eigen::Index size() const { return state.cols(); }
};

/// Fixed-capacity FIFO store of transitions, shared by all tasks.
class ReplayBuffer {
 public:
  ReplayBuffer(int obs_dim, int action_dim, long capacity, double reward_scale = 0.1);

  /// `terminal` cuts the bootstrap; time-limit truncation should pass false.
  void push(const Transition& t, bool terminal);
  long size() const { return size_; }
  long capacity() const { return capacity_; }
  int obs_dim() const { return obs_dim_; }
  int action_dim() const { return action_dim_; }
  double reward_scale() const { return reward_scale_; }

  std::vector<long> sample_indices(int count, Rng& rng) const;
  Batch gather(const std::vector<long>& indices) const;
  Batch sample(int count, Rng& rng) const { return gather(sample_indices(count, rng)); }

 private:
  int obs_dim_, action_dim_;
  long capacity_;
  double reward_scale_;
  long size_ = 0;
  long head_ = 0;
  std::vector<double> state_, action_, reward_, next_state_, terminal_;
  std::vector<int> task_;
};

struct CriticParams {
  Mlp<double> q1, q2;

  std::vector<DenseLayer<double>*> layers();
  std::vector<const DenseLayer<double>*> layers() const;
  bool operator==(const CriticParams&) const = default;
};

/// Twin soft Q-functions on (state, task one-hot, action) with target copies.
struct TwinCritic {
  int obs_dim = 0;
  int action_dim = 0;
  int task_count = 0;
  CriticParams online, target;

  TwinCritic() = default;
  TwinCritic(int obs_dim, int action_dim, int task_count, const std::vector<int>& hidden, Rng& rng);

  Mat input(const Mat& state, const std::vector<int>& task_id, const Mat& action) const;
  bool operator==(const TwinCritic&) const = default;
};

/// Actor input: the observation, optionally followed by the task one-hot.
Mat actor_input(const Mat& state, const std::vector<int>& task_id, int task_count, bool with_onehot);

struct AlphaState {
  std::vector<double> log_alpha;  // one per task
  double target_entropy = 0.0;

  double alpha(int task) const;
};

/// Pre-drawn standard-normal noise so the losses are plain functions of the
/// parameters.
struct LossNoise {
  Mat current;  // action_dim x batch, for a ~ pi(.|s)
  Mat next;     // action_dim x batch, for a' ~ pi(.|s')
};

LossNoise draw_noise(int action_dim, Eigen::Index batch, Rng& rng);

struct ActorLoss {
  double loss = 0.0;
  ParamGrads<double> grads;
  Eigen::RowVectorXd log_prob;  // per sample, batch order
};

/// mean[alpha_task * log pi(a|s) - min(Q1, Q2)(s, a)] with a reparameterized.
/// `plans[t]` routes every sample of task t.
ActorLoss actor_loss(const Batch& batch, const ModularActorNet<double>& actor, const std::vector<WeightPlan>& plans,
                     const TwinCritic& critic, const AlphaState& alpha, const Mat& noise, bool actor_task_onehot);

struct CriticLoss {
  double loss = 0.0;
  CriticParams grads;
  Eigen::RowVectorXd target;  // y per sample
};

/// Sum of both twins' mean squared error against the soft Bellman target.
CriticLoss critic_loss(const Batch& batch, const TwinCritic& critic, const ModularActorNet<double>& actor,
                       const std::vector<WeightPlan>& plans, const AlphaState& alpha, double gamma,
                       const Mat& next_noise, bool actor_task_onehot);

struct AlphaLoss {
  double loss = 0.0;
  double grad = 0.0;  // d loss / d log_alpha
};

/// mean[-alpha * (log pi + target_entropy)].
AlphaLoss alpha_loss(const Eigen::RowVectorXd& log_probs, double log_alpha, double target_entropy);

struct StepMetrics {
  long step = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  std::vector<int> task_id;  // tasks present in the batch
  std::vector<double> alpha;
  std::vector<double> entropy;
};

std::string to_jsonl(const StepMetrics& m);

/// Actor, critic, temperatures and their optimizers.
class SacAgent {
 public:
  SacAgent(ModularActorNet<double> actor, int obs_dim, int task_count, const SacConfig& cfg, Rng& rng);

  /// One critic, actor, per-task alpha and target update. Returns nothing
  /// when the buffer holds fewer than batch_size transitions.
  std::optional<StepMetrics> train_step(const ReplayBuffer& buffer, const std::vector<WeightPlan>& plans, Rng& rng);

  /// Stochastic or greedy (tanh of the mean) action for one observation.
  Eigen::VectorXd act(const Eigen::VectorXd& obs, int task_id, const WeightPlan& plan, bool greedy, Rng& rng) const;

  ModularActorNet<double>& actor() { return actor_; }
  const ModularActorNet<double>& actor() const { return actor_; }
  TwinCritic& critic() { return critic_; }
  const TwinCritic& critic() const { return critic_; }
  AlphaState& alpha() { return alpha_; }
  const AlphaState& alpha() const { return alpha_; }
  const SacConfig& config() const { return cfg_; }
  int task_count() const { return task_count_; }
  long updates() const { return updates_; }

 private:
  SacConfig cfg_;
  int task_count_;
  ModularActorNet<double> actor_;
  TwinCritic critic_;
  AlphaState alpha_;
  Adam<ActorParams<double>> actor_opt_;
  Adam<CriticParams> critic_opt_;
  std::vector<ScalarAdam> alpha_opt_;
  long updates_ = 0;
};

}  // namespace mega
