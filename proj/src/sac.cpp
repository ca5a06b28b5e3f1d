#include "mega/sac.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

namespace mega {

namespace {

Mat columns(const Mat& m, const std::vector<long>& idx) {
  Mat out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(idx[c]);
  return out;
}

// Column indices of each task present in the batch, ordered by task id.
std::map<int, std::vector<long>> group_by_task(const std::vector<int>& task_id) {
  std::map<int, std::vector<long>> groups;
  for (std::size_t c = 0; c < task_id.size(); ++c) groups[task_id[c]].push_back(static_cast<long>(c));
  return groups;
}

const WeightPlan& plan_for(const std::vector<WeightPlan>& plans, int task) {
  if (task < 0 || task >= static_cast<int>(plans.size())) {
    throw StructuralError("no weight plan for task " + std::to_string(task));
  }
  return plans[static_cast<std::size_t>(task)];
}

template <typename Params>
void accumulate(Params& into, const Params& from) {
  auto dst = into.layers();
  auto src = from.layers();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i]->weight += src[i]->weight;
    dst[i]->bias += src[i]->bias;
  }
}

}  // namespace

void SacConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (actor_lr <= 0.0 || critic_lr <= 0.0 || alpha_lr <= 0.0) throw ConfigError("learning rates must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (buffer_capacity < batch_size) throw ConfigError("buffer_capacity must be at least batch_size");
  if (tau < 0.0 || tau > 1.0) throw ConfigError("tau must lie in [0, 1]");
  if (reward_scale <= 0.0) throw ConfigError("reward_scale must be positive");
  if (critic_hidden.empty()) throw ConfigError("critic needs at least one hidden layer");
  for (int h : critic_hidden)
    if (h < 1) throw ConfigError("critic widths must be positive");
  if (!(initial_alpha > 0.0)) throw ConfigError("initial_alpha must be positive");
}

// ---------------------------------------------------------------------------
// Replay

ReplayBuffer::ReplayBuffer(int obs_dim, int action_dim, long capacity, double reward_scale)
    : obs_dim_(obs_dim), action_dim_(action_dim), capacity_(capacity), reward_scale_(reward_scale) {
  if (capacity < 1) throw ConfigError("replay capacity must be positive");
}

void ReplayBuffer::push(const Transition& t, bool terminal) {
  if (t.state.size() != obs_dim_ || t.next_state.size() != obs_dim_ || t.action.size() != action_dim_) {
    throw StructuralError("replay: transition has the wrong shape");
  }
  const auto write = [](std::vector<double>& dst, long slot, const Eigen::VectorXd& v, bool append) {
    if (append) {
      dst.insert(dst.end(), v.data(), v.data() + v.size());
    } else {
      std::copy(v.data(), v.data() + v.size(), dst.begin() + slot * v.size());
    }
  };
  const bool append = size_ < capacity_;
  write(state_, head_, t.state, append);
  write(action_, head_, t.action, append);
  write(next_state_, head_, t.next_state, append);
  const double r = t.reward * reward_scale_;
  if (append) {
    reward_.push_back(r);
    terminal_.push_back(terminal ? 1.0 : 0.0);
    task_.push_back(t.task_id);
    ++size_;
  } else {
    reward_[static_cast<std::size_t>(head_)] = r;
    terminal_[static_cast<std::size_t>(head_)] = terminal ? 1.0 : 0.0;
    task_[static_cast<std::size_t>(head_)] = t.task_id;
  }
  head_ = (head_ + 1) % capacity_;
}

std::vector<long> ReplayBuffer::sample_indices(int count, Rng& rng) const {
  if (size_ == 0) throw StructuralError("replay: sampling from an empty buffer");
  std::uniform_int_distribution<long> pick(0, size_ - 1);
  std::vector<long> idx(static_cast<std::size_t>(count));
  for (auto& i : idx) i = pick(rng);
  return idx;
}

Batch ReplayBuffer::gather(const std::vector<long>& indices) const {
  const auto n = static_cast<Eigen::Index>(indices.size());
  Batch b;
  b.state.resize(obs_dim_, n);
  b.next_state.resize(obs_dim_, n);
  b.action.resize(action_dim_, n);
  b.reward.resize(n);
  b.terminal.resize(n);
  b.task_id.resize(indices.size());
  for (Eigen::Index c = 0; c < n; ++c) {
    const long i = indices[static_cast<std::size_t>(c)];
    b.state.col(c) = Eigen::Map<const Eigen::VectorXd>(state_.data() + i * obs_dim_, obs_dim_);
    b.next_state.col(c) = Eigen::Map<const Eigen::VectorXd>(next_state_.data() + i * obs_dim_, obs_dim_);
    b.action.col(c) = Eigen::Map<const Eigen::VectorXd>(action_.data() + i * action_dim_, action_dim_);
    b.reward[c] = reward_[static_cast<std::size_t>(i)];
    b.terminal[c] = terminal_[static_cast<std::size_t>(i)];
    b.task_id[static_cast<std::size_t>(c)] = task_[static_cast<std::size_t>(i)];
  }
  return b;
}

// ---------------------------------------------------------------------------
// Networks

std::vector<DenseLayer<double>*> CriticParams::layers() {
  auto out = q1.layers();
  for (auto* l : q2.layers()) out.push_back(l);
  return out;
}

std::vector<const DenseLayer<double>*> CriticParams::layers() const {
  auto out = q1.layers();
  for (const auto* l : q2.layers()) out.push_back(l);
  return out;
}

TwinCritic::TwinCritic(int obs_dim_, int action_dim_, int task_count_, const std::vector<int>& hidden, Rng& rng)
    : obs_dim(obs_dim_), action_dim(action_dim_), task_count(task_count_) {
  std::vector<Eigen::Index> widths{obs_dim + task_count + action_dim};
  for (int h : hidden) widths.push_back(h);
  widths.push_back(1);
  online.q1 = Mlp<double>::make(widths, rng);
  online.q2 = Mlp<double>::make(widths, rng);
  target = online;
}

Mat TwinCritic::input(const Mat& state, const std::vector<int>& task_id, const Mat& action) const {
  const auto n = state.cols();
  Mat x = Mat::Zero(obs_dim + task_count + action_dim, n);
  x.topRows(obs_dim) = state;
  for (Eigen::Index c = 0; c < n; ++c) {
    const int t = task_id[static_cast<std::size_t>(c)];
    if (t < 0 || t >= task_count) throw StructuralError("critic: task id out of range");
    x(obs_dim + t, c) = 1.0;
  }
  x.bottomRows(action_dim) = action;
  return x;
}

Mat actor_input(const Mat& state, const std::vector<int>& task_id, int task_count, bool with_onehot) {
  if (!with_onehot) return state;
  Mat x = Mat::Zero(state.rows() + task_count, state.cols());
  x.topRows(state.rows()) = state;
  for (Eigen::Index c = 0; c < state.cols(); ++c) x(state.rows() + task_id[static_cast<std::size_t>(c)], c) = 1.0;
  return x;
}

double AlphaState::alpha(int task) const { return std::exp(log_alpha.at(static_cast<std::size_t>(task))); }

LossNoise draw_noise(int action_dim, Eigen::Index batch, Rng& rng) {
  LossNoise n;
  n.next = standard_normal<double>(action_dim, batch, rng);
  n.current = standard_normal<double>(action_dim, batch, rng);
  return n;
}

// ---------------------------------------------------------------------------
// Losses

ActorLoss actor_loss(const Batch& batch, const ModularActorNet<double>& actor, const std::vector<WeightPlan>& plans,
                     const TwinCritic& critic, const AlphaState& alpha, const Mat& noise, bool actor_task_onehot) {
  const auto n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  ActorLoss out;
  out.grads = zeros_like(actor.params());
  out.log_prob.resize(n);

  for (const auto& [task, idx] : group_by_task(batch.task_id)) {
    const std::vector<int> tasks(idx.size(), task);
    const Mat s = columns(batch.state, idx);
    const auto fwd = actor.forward(actor_input(s, tasks, critic.task_count, actor_task_onehot), plan_for(plans, task));
    const auto smp = squash_with_noise<double>(fwd.mean, fwd.log_std, columns(noise, idx));

    const Mat q_in = critic.input(s, tasks, smp.action);
    Mlp<double>::Trace t1, t2;
    const Mat q1 = critic.online.q1.forward(q_in, &t1);
    const Mat q2 = critic.online.q2.forward(q_in, &t2);
    const double a = alpha.alpha(task);

    Mat g1 = Mat::Zero(1, q1.cols()), g2 = Mat::Zero(1, q1.cols());
    for (Eigen::Index c = 0; c < q1.cols(); ++c) {
      const bool first = q1(0, c) <= q2(0, c);
      const double q = first ? q1(0, c) : q2(0, c);
      out.loss += (a * smp.log_prob(0, c) - q) * inv_n;
      (first ? g1 : g2)(0, c) = -inv_n;
      out.log_prob[idx[static_cast<std::size_t>(c)]] = smp.log_prob(0, c);
    }
    // Critic parameters are held fixed; only the input gradient is used.
    const Mat dx = critic.online.q1.input_gradient(t1, g1) + critic.online.q2.input_gradient(t2, g2);
    const Mat grad_action = dx.bottomRows(critic.action_dim);
    const Mat grad_log_prob = Mat::Constant(1, q1.cols(), a * inv_n);

    const auto sg = squash_backward(smp, fwd.log_std, grad_action, grad_log_prob);
    accumulate(out.grads, actor.backward(fwd.trace, actor.head_gradient(fwd.trace, sg.mean, sg.log_std)));
  }
  return out;
}

CriticLoss critic_loss(const Batch& batch, const TwinCritic& critic, const ModularActorNet<double>& actor,
                       const std::vector<WeightPlan>& plans, const AlphaState& alpha, double gamma,
                       const Mat& next_noise, bool actor_task_onehot) {
  const auto n = batch.size();
  CriticLoss out;
  out.target.resize(n);

  for (const auto& [task, idx] : group_by_task(batch.task_id)) {
    const std::vector<int> tasks(idx.size(), task);
    const Mat s2 = columns(batch.next_state, idx);
    const auto fwd = actor.forward(actor_input(s2, tasks, critic.task_count, actor_task_onehot), plan_for(plans, task));
    const auto smp = squash_with_noise<double>(fwd.mean, fwd.log_std, columns(next_noise, idx));
    const Mat q_in = critic.input(s2, tasks, smp.action);
    const Mat q1 = critic.target.q1.forward(q_in);
    const Mat q2 = critic.target.q2.forward(q_in);
    const double a = alpha.alpha(task);
    for (std::size_t c = 0; c < idx.size(); ++c) {
      const auto col = static_cast<Eigen::Index>(c);
      const double soft_v = std::min(q1(0, col), q2(0, col)) - a * smp.log_prob(0, col);
      const long i = idx[c];
      out.target[i] = batch.reward[i] + gamma * (1.0 - batch.terminal[i]) * soft_v;
    }
  }

  const Mat q_in = critic.input(batch.state, batch.task_id, batch.action);
  Mlp<double>::Trace t1, t2;
  const Mat d1 = critic.online.q1.forward(q_in, &t1) - out.target;
  const Mat d2 = critic.online.q2.forward(q_in, &t2) - out.target;
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss = (d1.squaredNorm() + d2.squaredNorm()) * inv_n;
  out.grads = zeros_like(critic.online);
  critic.online.q1.backward(t1, 2.0 * inv_n * d1, out.grads.q1);
  critic.online.q2.backward(t2, 2.0 * inv_n * d2, out.grads.q2);
  return out;
}

AlphaLoss alpha_loss(const Eigen::RowVectorXd& log_probs, double log_alpha, double target_entropy) {
  AlphaLoss out;
  if (log_probs.size() == 0) return out;
  const double a = std::exp(log_alpha);
  out.loss = -a * (log_probs.array() + target_entropy).mean();
  out.grad = out.loss;  // d(-e^x c)/dx = -e^x c
  return out;
}

std::string to_jsonl(const StepMetrics& m) {
  std::string lines;
  for (std::size_t k = 0; k < m.task_id.size(); ++k) {
    nlohmann::json j;
    j["step"] = m.step;
    j["task_id"] = m.task_id[k];
    j["critic_loss"] = m.critic_loss;
    j["actor_loss"] = m.actor_loss;
    j["alpha"] = m.alpha[k];
    j["entropy"] = m.entropy[k];
    lines += j.dump();
    lines += '\n';
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Agent

SacAgent::SacAgent(ModularActorNet<double> actor, int obs_dim, int task_count, const SacConfig& cfg, Rng& rng)
    : cfg_(cfg),
      task_count_(task_count),
      actor_(std::move(actor)),
      actor_opt_(cfg.actor_lr),
      critic_opt_(cfg.critic_lr) {
  cfg.validate();
  const int action_dim = actor_.dims().action_dim;
  const int expected_in = obs_dim + (cfg.actor_task_onehot ? task_count : 0);
  if (actor_.dims().state_dim != expected_in) throw ConfigError("actor input width does not match the observation");
  critic_ = TwinCritic(obs_dim, action_dim, task_count, cfg.critic_hidden, rng);
  alpha_.log_alpha.assign(static_cast<std::size_t>(task_count), std::log(cfg.initial_alpha));
  alpha_.target_entropy = cfg.target_entropy.value_or(-static_cast<double>(action_dim));
  alpha_opt_.assign(static_cast<std::size_t>(task_count), ScalarAdam(cfg.alpha_lr));
}

std::optional<StepMetrics> SacAgent::train_step(const ReplayBuffer& buffer, const std::vector<WeightPlan>& plans,
                                                Rng& rng) {
  if (buffer.size() < cfg_.batch_size) return std::nullopt;
  const Batch batch = buffer.sample(cfg_.batch_size, rng);
  const LossNoise noise = draw_noise(actor_.dims().action_dim, batch.size(), rng);

  const auto cl = critic_loss(batch, critic_, actor_, plans, alpha_, cfg_.gamma, noise.next, cfg_.actor_task_onehot);
  critic_opt_.step(critic_.online, cl.grads);

  const auto al = actor_loss(batch, actor_, plans, critic_, alpha_, noise.current, cfg_.actor_task_onehot);
  actor_opt_.step(actor_.params(), al.grads);

  StepMetrics m;
  m.step = ++updates_;
  m.critic_loss = cl.loss;
  m.actor_loss = al.loss;
  for (const auto& [task, idx] : group_by_task(batch.task_id)) {
    Eigen::RowVectorXd lp(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t c = 0; c < idx.size(); ++c) lp[static_cast<Eigen::Index>(c)] = al.log_prob[idx[c]];
    auto& log_alpha = alpha_.log_alpha[static_cast<std::size_t>(task)];
    if (cfg_.learn_alpha) alpha_opt_[static_cast<std::size_t>(task)].step(log_alpha, alpha_loss(lp, log_alpha, alpha_.target_entropy).grad);
    m.task_id.push_back(task);
    m.alpha.push_back(std::exp(log_alpha));
    m.entropy.push_back(-lp.mean());
  }

  soft_update(critic_.online, critic_.target, cfg_.tau);
  return m;
}

Eigen::VectorXd SacAgent::act(const Eigen::VectorXd& obs, int task_id, const WeightPlan& plan, bool greedy,
                              Rng& rng) const {
  const Mat x = actor_input(obs, {task_id}, task_count_, cfg_.actor_task_onehot);
  const auto fwd = actor_.forward(x, plan);
  if (greedy) return fwd.mean.col(0).array().tanh().matrix();
  return sample_action(fwd.mean, fwd.log_std, rng).action.col(0);
}

}  // namespace mega
