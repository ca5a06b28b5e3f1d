#include "mega/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace mega {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Stream : std::uint32_t { kInitStream, kEnvStream, kGaStream, kActStream, kSacStream, kEvalStream, kStreamCount };

Rng make_stream(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return Rng(seq);
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Baseline parse_baseline(const std::string& name, int& fixed_modules) {
  if (name == "mega") return Baseline::mega;
  if (name == "mtsac") return Baseline::mtsac;
  if (name.starts_with("fixed-")) {
    try {
      std::size_t used = 0;
      fixed_modules = std::stoi(name.substr(6), &used);
      if (used == name.size() - 6) return Baseline::fixed;
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown baseline '" + name + "' (expected mega, mtsac or fixed-K)");
}

using Setter = std::function<void(RunConfig&, const json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"suite", [](RunConfig& c, const json& v) { c.suite = v.get<std::string>(); }},
      {"seed", [](RunConfig& c, const json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"episodes_per_task", [](RunConfig& c, const json& v) { c.episodes_per_task = v.get<int>(); }},
      {"eval_episodes", [](RunConfig& c, const json& v) { c.eval_episodes = v.get<int>(); }},
      {"population_size", [](RunConfig& c, const json& v) { c.ga.population_size = v.get<int>(); }},
      {"abandon_rate", [](RunConfig& c, const json& v) { c.ga.abandon_rate = v.get<double>(); }},
      {"crossover_rate", [](RunConfig& c, const json& v) { c.ga.crossover_rate = v.get<double>(); }},
      {"mutate_rate", [](RunConfig& c, const json& v) { c.ga.mutate_rate = v.get<double>(); }},
      {"crossover_cross_population",
       [](RunConfig& c, const json& v) { c.ga.crossover_cross_population = v.get<double>(); }},
      {"mutate_cross_population", [](RunConfig& c, const json& v) { c.ga.mutate_cross_population = v.get<double>(); }},
      {"mutate_best", [](RunConfig& c, const json& v) { c.ga.mutate_best = v.get<double>(); }},
      {"max_eval", [](RunConfig& c, const json& v) { c.ga.max_eval = v.get<int>(); }},
      {"p_best_select", [](RunConfig& c, const json& v) { c.ga.p_best_select = v.get<double>(); }},
      {"module_weight_precision", [](RunConfig& c, const json& v) { c.precision = v.get<int>(); }},
      {"start_stages", [](RunConfig& c, const json& v) { c.stage.start_stage = v.get<int>(); }},
      {"stage_cap", [](RunConfig& c, const json& v) { c.stage.stage_cap = v.get<int>(); }},
      {"success_window", [](RunConfig& c, const json& v) { c.stage.window = v.get<int>(); }},
      {"min_success", [](RunConfig& c, const json& v) { c.stage.min_success = v.get<double>(); }},
      {"fitness_epsilon_fraction", [](RunConfig& c, const json& v) { c.fitness_epsilon_fraction = v.get<double>(); }},
      {"generation_window", [](RunConfig& c, const json& v) { c.stage.generation_window = v.get<int>(); }},
      {"cooldown", [](RunConfig& c, const json& v) { c.stage.cooldown = v.get<int>(); }},
      {"gamma", [](RunConfig& c, const json& v) { c.sac.gamma = v.get<double>(); }},
      {"actor_lr", [](RunConfig& c, const json& v) { c.sac.actor_lr = v.get<double>(); }},
      {"critic_lr", [](RunConfig& c, const json& v) { c.sac.critic_lr = v.get<double>(); }},
      {"alpha_lr", [](RunConfig& c, const json& v) { c.sac.alpha_lr = v.get<double>(); }},
      {"batch_size", [](RunConfig& c, const json& v) { c.sac.batch_size = v.get<int>(); }},
      {"replay_buffer_size", [](RunConfig& c, const json& v) { c.sac.buffer_capacity = v.get<long>(); }},
      {"soft_update_rate", [](RunConfig& c, const json& v) { c.sac.tau = v.get<double>(); }},
      {"reward_scale", [](RunConfig& c, const json& v) { c.sac.reward_scale = v.get<double>(); }},
      {"initial_alpha", [](RunConfig& c, const json& v) { c.sac.initial_alpha = v.get<double>(); }},
      {"learn_alpha", [](RunConfig& c, const json& v) { c.sac.learn_alpha = v.get<bool>(); }},
      {"target_entropy",
       [](RunConfig& c, const json& v) {
         c.sac.target_entropy = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
       }},
      {"critic_hidden", [](RunConfig& c, const json& v) { c.sac.critic_hidden = v.get<std::vector<int>>(); }},
      {"embedding_size", [](RunConfig& c, const json& v) { c.net.embed_hidden = v.get<int>(); }},
      {"module_dim", [](RunConfig& c, const json& v) { c.net.module_dim = v.get<int>(); }},
      {"module_size", [](RunConfig& c, const json& v) { c.net.module_hidden = v.get<int>(); }},
      {"evolution", [](RunConfig& c, const json& v) { c.evolution = v.get<bool>(); }},
      {"decode", [](RunConfig& c, const json& v) { c.decode = parse_weight_mode(v.get<std::string>()); }},
      {"ga", [](RunConfig& c, const json& v) { c.ga_enabled = v.get<bool>(); }},
      {"baseline",
       [](RunConfig& c, const json& v) { c.baseline = parse_baseline(v.get<std::string>(), c.fixed_modules); }},
      {"warmup_steps", [](RunConfig& c, const json& v) { c.warmup_steps = v.get<int>(); }},
      {"metrics_every", [](RunConfig& c, const json& v) { c.metrics_every = v.get<int>(); }},
      {"checkpoint_every", [](RunConfig& c, const json& v) { c.checkpoint_every = v.get<int>(); }},
  };
  return table;
}

bool uses_genotypes(const RunConfig& cfg) { return cfg.baseline != Baseline::mtsac; }

// Stage rule actually applied: evolution off or a fixed baseline pins the
// stage, and epsilon becomes absolute against the suite's reward range.
StageConfig effective_stage_config(const RunConfig& cfg, const std::vector<TaskInstance>& suite) {
  StageConfig sc = cfg.stage;
  double range = 0.0;
  for (const auto& t : suite) range = std::max(range, episode_reward_range(t));
  sc.fitness_epsilon = cfg.fitness_epsilon_fraction * range;
  switch (cfg.baseline) {
    case Baseline::mega:
      if (!cfg.evolution) sc.stage_cap = sc.start_stage;
      break;
    case Baseline::fixed:
      sc.start_stage = sc.stage_cap = cfg.fixed_modules;
      break;
    case Baseline::mtsac:
      sc.start_stage = sc.stage_cap = 1;
      break;
  }
  return sc;
}

NetDims effective_dims(const RunConfig& cfg, int task_count) {
  NetDims d = cfg.net;
  d.state_dim = kObsDim + (cfg.baseline == Baseline::mtsac ? task_count : 0);
  d.action_dim = kActionDim;
  return d;
}

SacConfig effective_sac(const RunConfig& cfg) {
  SacConfig s = cfg.sac;
  s.actor_task_onehot = cfg.baseline == Baseline::mtsac;
  return s;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_stdev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------------------
// Binary bundle

constexpr char kMagic[8] = {'M', 'E', 'G', 'A', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  template <typename T>
  void value(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void size(std::size_t n) { value(static_cast<std::uint64_t>(n)); }
  void string(const std::string& s) {
    size(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void matrix(const Mat& m) {
    value(static_cast<std::int64_t>(m.rows()));
    value(static_cast<std::int64_t>(m.cols()));
    os_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  void layer(const DenseLayer<double>& l) {
    matrix(l.weight);
    matrix(Mat(l.bias));
  }
  void mlp(const Mlp<double>& m) {
    size(m.dense.size());
    for (const auto& l : m.dense) layer(l);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  template <typename T>
  T value() {
    static_assert(std::is_trivially_copyable_v<T>);
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof v);
    check();
    return v;
  }
  std::size_t size() {
    const auto n = value<std::uint64_t>();
    if (n > (1ULL << 34)) throw StructuralError("checkpoint: implausible length field");
    return static_cast<std::size_t>(n);
  }
  std::string string() {
    std::string s(size(), '\0');
    is_.read(s.data(), static_cast<std::streamsize>(s.size()));
    check();
    return s;
  }
  Mat matrix() {
    const auto rows = value<std::int64_t>();
    const auto cols = value<std::int64_t>();
    if (rows < 0 || cols < 0 || rows * cols > (1LL << 30)) throw StructuralError("checkpoint: bad matrix shape");
    Mat m(rows, cols);
    is_.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    check();
    return m;
  }
  DenseLayer<double> layer() {
    DenseLayer<double> l;
    l.weight = matrix();
    const Mat b = matrix();
    if (b.cols() != 1 || b.rows() != l.weight.rows()) throw StructuralError("checkpoint: bias shape mismatch");
    l.bias = b.col(0);
    return l;
  }
  Mlp<double> mlp() {
    Mlp<double> m;
    const auto n = size();
    for (std::size_t i = 0; i < n; ++i) m.dense.push_back(layer());
    return m;
  }

 private:
  void check() {
    if (!is_) throw StructuralError("checkpoint: truncated file");
  }
  std::istream& is_;
};

void write_genotype(Writer& w, const GenotypePolicy& g) {
  w.size(g.bits.size());
  for (auto b : g.bits) w.value(b);
  w.value(static_cast<std::int32_t>(g.precision));
  w.value(static_cast<std::int32_t>(g.stage));
  w.value(static_cast<std::uint8_t>(g.fitness.has_value()));
  w.value(g.fitness.value_or(0.0));
  w.value(static_cast<std::int32_t>(g.eval_count));
  w.value(g.id);
}

GenotypePolicy read_genotype(Reader& r) {
  GenotypePolicy g;
  g.bits.resize(r.size());
  for (auto& b : g.bits) b = r.value<std::uint8_t>();
  g.precision = r.value<std::int32_t>();
  g.stage = r.value<std::int32_t>();
  const bool has_fitness = r.value<std::uint8_t>() != 0;
  const double fitness = r.value<double>();
  if (has_fitness) g.fitness = fitness;
  g.eval_count = r.value<std::int32_t>();
  g.id = r.value<std::uint64_t>();
  validate(g);
  return g;
}

Eigen::VectorXd greedy_action(const ModularActorNet<double>& actor, const Eigen::VectorXd& obs, int task_id,
                              int task_count, bool onehot, const WeightPlan& plan) {
  const auto fwd = actor.forward(actor_input(obs, {task_id}, task_count, onehot), plan);
  return fwd.mean.col(0).array().tanh().matrix();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
  if (episodes_per_task < 1) throw ConfigError("episodes_per_task must be positive");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be positive");
  if (precision < 1 || precision > kMaxPrecision) throw ConfigError("module_weight_precision must lie in [1, 8]");
  if (fitness_epsilon_fraction < 0.0) throw ConfigError("fitness_epsilon_fraction must be non-negative");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (metrics_every < 1) throw ConfigError("metrics_every must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (net.module_dim < 1 || net.embed_hidden < 1 || net.module_hidden < 1) {
    throw ConfigError("network widths must be positive");
  }
  if (baseline == Baseline::fixed && fixed_modules < stage.start_stage) {
    throw ConfigError("fixed-K needs K >= start_stages");
  }
  make_suite(suite, seed);  // rejects unknown suites
  ga.validate();
  sac.validate();
  stage.validate();
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  c.merge(j);
  return c;
}

void RunConfig::merge(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(*this, value);
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
}

std::string RunConfig::baseline_name() const {
  switch (baseline) {
    case Baseline::mega: return "mega";
    case Baseline::mtsac: return "mtsac";
    case Baseline::fixed: return "fixed-" + std::to_string(fixed_modules);
  }
  return "mega";
}

json RunConfig::to_json() const {
  json j;
  j["suite"] = suite;
  j["seed"] = seed;
  j["episodes_per_task"] = episodes_per_task;
  j["eval_episodes"] = eval_episodes;
  j["population_size"] = ga.population_size;
  j["abandon_rate"] = ga.abandon_rate;
  j["crossover_rate"] = ga.crossover_rate;
  j["mutate_rate"] = ga.mutate_rate;
  j["crossover_cross_population"] = ga.crossover_cross_population;
  j["mutate_cross_population"] = ga.mutate_cross_population;
  j["mutate_best"] = ga.mutate_best;
  j["max_eval"] = ga.max_eval;
  j["p_best_select"] = ga.p_best_select;
  j["module_weight_precision"] = precision;
  j["start_stages"] = stage.start_stage;
  j["stage_cap"] = stage.stage_cap;
  j["success_window"] = stage.window;
  j["min_success"] = stage.min_success;
  j["fitness_epsilon_fraction"] = fitness_epsilon_fraction;
  j["generation_window"] = stage.generation_window;
  j["cooldown"] = stage.cooldown;
  j["gamma"] = sac.gamma;
  j["actor_lr"] = sac.actor_lr;
  j["critic_lr"] = sac.critic_lr;
  j["alpha_lr"] = sac.alpha_lr;
  j["batch_size"] = sac.batch_size;
  j["replay_buffer_size"] = sac.buffer_capacity;
  j["soft_update_rate"] = sac.tau;
  j["reward_scale"] = sac.reward_scale;
  j["initial_alpha"] = sac.initial_alpha;
  j["learn_alpha"] = sac.learn_alpha;
  j["target_entropy"] = sac.target_entropy ? json(*sac.target_entropy) : json(nullptr);
  j["critic_hidden"] = sac.critic_hidden;
  j["embedding_size"] = net.embed_hidden;
  j["module_dim"] = net.module_dim;
  j["module_size"] = net.module_hidden;
  j["evolution"] = evolution;
  j["decode"] = to_string(decode);
  j["ga"] = ga_enabled;
  j["baseline"] = baseline_name();
  j["warmup_steps"] = warmup_steps;
  j["metrics_every"] = metrics_every;
  j["checkpoint_every"] = checkpoint_every;
  return j;
}

json parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  return json{{key, value}};
}

std::string to_jsonl(const MetricsRecord& r) {
  json j;
  j["episode"] = r.episode;
  j["task_id"] = r.task_id;
  j["return"] = r.episode_return;
  j["success"] = r.success;
  j["genotype_id"] = r.genotype_id;
  j["genotype_length"] = r.genotype_length;
  j["stage"] = r.stage;
  j["module_count"] = r.module_count;
  return j.dump();
}

std::string SuccessTable::to_csv() const {
  std::ostringstream os;
  os << "task_id,task,episodes,success_rate,stdev\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.success_rate, r.stdev);
    os << r.task_id << ',' << r.task << ',' << r.episodes << ',' << buf << '\n';
  }
  std::snprintf(buf, sizeof buf, "%.6f,%.6f", suite_mean, suite_stdev);
  os << "-1,suite," << (rows.empty() ? 0 : rows.front().episodes) << ',' << buf << '\n';
  return os.str();
}

std::string UsageComparison::to_csv() const {
  std::ostringstream os;
  os << "task_id,task,stage_a,stage_b,difference\n";
  for (const auto& r : rows) os << r.task_id << ',' << r.task << ',' << r.stage_a << ',' << r.stage_b << ',' << r.difference << '\n';
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", mean_difference);
  os << "-1,mean,,," << buf << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  std::ostringstream buffer;
  Writer w(buffer);
  buffer.write(kMagic, sizeof kMagic);
  w.value(kCheckpointVersion);
  w.string(ckpt.config.to_json().dump());
  w.value(ckpt.episode);
  w.value(ckpt.env_steps);

  const auto& dims = ckpt.actor.dims();
  for (int v : {dims.state_dim, dims.action_dim, dims.module_dim, dims.embed_hidden, dims.module_hidden}) {
    w.value(static_cast<std::int32_t>(v));
  }
  w.value(static_cast<std::int32_t>(ckpt.actor.activation()));
  w.value(ckpt.actor.log_std_min);
  w.value(ckpt.actor.log_std_max);
  w.value(static_cast<std::int32_t>(ckpt.actor.module_count()));
  for (const auto* l : ckpt.actor.params().layers()) w.layer(*l);

  w.value(static_cast<std::int32_t>(ckpt.critic.obs_dim));
  w.value(static_cast<std::int32_t>(ckpt.critic.action_dim));
  w.value(static_cast<std::int32_t>(ckpt.critic.task_count));
  for (const auto* m : {&ckpt.critic.online.q1, &ckpt.critic.online.q2, &ckpt.critic.target.q1, &ckpt.critic.target.q2}) {
    w.mlp(*m);
  }

  w.value(ckpt.alpha.target_entropy);
  w.size(ckpt.alpha.log_alpha.size());
  for (double a : ckpt.alpha.log_alpha) w.value(a);

  w.size(ckpt.community.populations.size());
  for (const auto& pop : ckpt.community.populations) {
    w.value(static_cast<std::int32_t>(pop.task_id));
    w.value(static_cast<std::int32_t>(pop.stage));
    w.value(static_cast<std::int32_t>(pop.precision));
    w.value(static_cast<std::uint8_t>(pop.best_index.has_value()));
    w.value(static_cast<std::uint64_t>(pop.best_index.value_or(0)));
    w.value(pop.next_id);
    w.size(pop.members.size());
    for (const auto& g : pop.members) write_genotype(w, g);
  }

  w.size(static_cast<std::size_t>(ckpt.tracker.task_count()));
  for (int t = 0; t < ckpt.tracker.task_count(); ++t) {
    const auto& ts = ckpt.tracker.at(t);
    w.value(static_cast<std::int32_t>(ts.stage));
    w.value(static_cast<std::int32_t>(ts.cooldown_remaining));
    w.size(ts.success_window.size());
    for (bool s : ts.success_window) w.value(static_cast<std::uint8_t>(s));
    w.size(ts.best_fitness_history.size());
    for (double f : ts.best_fitness_history) w.value(f);
  }

  w.size(ckpt.rng_states.size());
  for (const auto& s : ckpt.rng_states) w.string(s);

  // Write to a sibling file first so a crash never leaves a torn bundle.
  const fs::path tmp = path.string() + ".tmp";
  {
    auto out = open_output(tmp);
    const auto bytes = buffer.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + sizeof magic, kMagic)) throw StructuralError("not a checkpoint: " + path.string());
  Reader r(in);
  const auto version = r.value<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw StructuralError("checkpoint version " + std::to_string(version) + " is not supported");
  }

  Checkpoint ckpt;
  ckpt.config = RunConfig::from_json(json::parse(r.string()));
  ckpt.episode = r.value<long>();
  ckpt.env_steps = r.value<long>();
  const auto suite = make_suite(ckpt.config.suite, ckpt.config.seed);
  const int task_count = static_cast<int>(suite.size());

  NetDims dims;
  dims.state_dim = r.value<std::int32_t>();
  dims.action_dim = r.value<std::int32_t>();
  dims.module_dim = r.value<std::int32_t>();
  dims.embed_hidden = r.value<std::int32_t>();
  dims.module_hidden = r.value<std::int32_t>();
  if (!(dims == effective_dims(ckpt.config, task_count))) {
    throw StructuralError("checkpoint: network dimensions disagree with its config");
  }
  const auto activation = static_cast<Activation>(r.value<std::int32_t>());
  const double log_std_min = r.value<double>();
  const double log_std_max = r.value<double>();
  const int module_count = r.value<std::int32_t>();
  if (module_count < 1 || module_count > 4096) throw StructuralError("checkpoint: bad module count");
  Rng scratch(0);
  ckpt.actor = ModularActorNet<double>(dims, module_count, scratch, activation);
  ckpt.actor.log_std_min = log_std_min;
  ckpt.actor.log_std_max = log_std_max;
  for (auto* l : ckpt.actor.params().layers()) {
    auto loaded = r.layer();
    if (loaded.weight.rows() != l->weight.rows() || loaded.weight.cols() != l->weight.cols()) {
      throw StructuralError("checkpoint: actor layer shape mismatch");
    }
    *l = std::move(loaded);
  }

  ckpt.critic.obs_dim = r.value<std::int32_t>();
  ckpt.critic.action_dim = r.value<std::int32_t>();
  ckpt.critic.task_count = r.value<std::int32_t>();
  if (ckpt.critic.task_count != task_count) throw StructuralError("checkpoint: critic task count mismatch");
  ckpt.critic.online.q1 = r.mlp();
  ckpt.critic.online.q2 = r.mlp();
  ckpt.critic.target.q1 = r.mlp();
  ckpt.critic.target.q2 = r.mlp();

  ckpt.alpha.target_entropy = r.value<double>();
  ckpt.alpha.log_alpha.resize(r.size());
  for (auto& a : ckpt.alpha.log_alpha) a = r.value<double>();

  ckpt.community.populations.resize(r.size());
  if (static_cast<int>(ckpt.community.populations.size()) != task_count) {
    throw StructuralError("checkpoint: population count mismatch");
  }
  for (auto& pop : ckpt.community.populations) {
    pop.task_id = r.value<std::int32_t>();
    pop.stage = r.value<std::int32_t>();
    pop.precision = r.value<std::int32_t>();
    const bool has_best = r.value<std::uint8_t>() != 0;
    const auto best = r.value<std::uint64_t>();
    pop.next_id = r.value<std::uint64_t>();
    pop.members.resize(r.size());
    for (auto& g : pop.members) g = read_genotype(r);
    if (has_best) {
      if (best >= pop.members.size()) throw StructuralError("checkpoint: best index out of range");
      pop.best_index = static_cast<std::size_t>(best);
    }
  }

  ckpt.tracker = StageTracker(task_count, effective_stage_config(ckpt.config, suite));
  if (static_cast<int>(r.size()) != task_count) throw StructuralError("checkpoint: stage tracker size mismatch");
  for (int t = 0; t < task_count; ++t) {
    auto& ts = ckpt.tracker.at(t);
    ts.stage = r.value<std::int32_t>();
    ts.cooldown_remaining = r.value<std::int32_t>();
    ts.success_window.resize(r.size());
    for (auto&& s : ts.success_window) s = r.value<std::uint8_t>() != 0;
    ts.best_fitness_history.resize(r.size());
    for (auto& f : ts.best_fitness_history) f = r.value<double>();
    if (ts.stage > ckpt.actor.module_count() && uses_genotypes(ckpt.config)) {
      throw StructuralError("checkpoint: task stage exceeds the network's module count");
    }
  }

  ckpt.rng_states.resize(r.size());
  for (auto& s : ckpt.rng_states) s = r.string();
  return ckpt;
}

// ---------------------------------------------------------------------------
// Evaluation

WeightPlan evaluation_plan(const Checkpoint& ckpt, int task_id) {
  if (!uses_genotypes(ckpt.config)) return chain_plan(1);
  const auto& pop = ckpt.community.populations.at(static_cast<std::size_t>(task_id));
  const auto& g = pop.best_index ? pop.members[*pop.best_index] : pop.members.front();
  return decode_to_weights(g, ckpt.config.decode);
}

SuccessTable evaluate_policy(const std::vector<TaskInstance>& suite, const Policy& policy, int episodes, Rng& rng) {
  SuccessTable table;
  for (const auto& task : suite) {
    int wins = 0;
    for (int e = 0; e < episodes; ++e) {
      auto s = reset(task, rng);
      while (!s.done) s = step(task, s, policy(task, s)).state;
      wins += s.success;
    }
    table.rows.push_back({task.task_id, task.name(), episodes, static_cast<double>(wins) / episodes, 0.0});
  }
  std::vector<double> rates;
  for (const auto& r : table.rows) rates.push_back(r.success_rate);
  table.suite_mean = mean(rates);
  return table;
}

SuccessTable evaluate(const Checkpoint& ckpt, int episodes_per_task) {
  const auto suite = make_suite(ckpt.config.suite, ckpt.config.seed);
  const int task_count = static_cast<int>(suite.size());
  for (const auto& pop : ckpt.community.populations) {
    if (uses_genotypes(ckpt.config) && pop.stage > ckpt.actor.module_count()) {
      throw StructuralError("evaluate: population stage exceeds the network's module count");
    }
  }
  std::vector<WeightPlan> plans;
  for (int t = 0; t < task_count; ++t) plans.push_back(evaluation_plan(ckpt, t));
  const bool onehot = ckpt.config.baseline == Baseline::mtsac;
  Rng rng = make_stream(ckpt.config.seed, kEvalStream);
  return evaluate_policy(
      suite,
      [&](const TaskInstance& task, const EnvState& s) {
        return greedy_action(ckpt.actor, observe(s), task.task_id, task_count, onehot,
                             plans[static_cast<std::size_t>(task.task_id)]);
      },
      episodes_per_task, rng);
}

SuccessTable evaluate(const std::vector<Checkpoint>& ckpts, int episodes_per_task) {
  if (ckpts.empty()) throw ConfigError("evaluate: no checkpoints");
  std::vector<SuccessTable> tables;
  for (const auto& c : ckpts) {
    if (c.config.suite != ckpts.front().config.suite) throw StructuralError("evaluate: checkpoints span different suites");
    tables.push_back(evaluate(c, episodes_per_task));
  }
  if (tables.size() == 1) return tables.front();
  SuccessTable out;
  for (std::size_t t = 0; t < tables.front().rows.size(); ++t) {
    std::vector<double> rates;
    for (const auto& tab : tables) rates.push_back(tab.rows[t].success_rate);
    auto row = tables.front().rows[t];
    row.success_rate = mean(rates);
    row.stdev = sample_stdev(rates);
    out.rows.push_back(row);
  }
  std::vector<double> suite_means;
  for (const auto& tab : tables) suite_means.push_back(tab.suite_mean);
  out.suite_mean = mean(suite_means);
  out.suite_stdev = sample_stdev(suite_means);
  return out;
}

// ---------------------------------------------------------------------------
// Training

TrainingReport run_training(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  const auto suite = make_suite(cfg.suite, cfg.seed);
  const int task_count = static_cast<int>(suite.size());
  const bool genotypes = uses_genotypes(cfg);
  const StageConfig stage_cfg = effective_stage_config(cfg, suite);

  std::vector<Rng> streams;
  for (std::uint32_t k = 0; k < kStreamCount; ++k) streams.push_back(make_stream(cfg.seed, k));
  Rng& init_rng = streams[kInitStream];
  Rng& env_rng = streams[kEnvStream];
  Rng& ga_rng = streams[kGaStream];
  Rng& act_rng = streams[kActStream];
  Rng& sac_rng = streams[kSacStream];

  SacAgent agent(ModularActorNet<double>(effective_dims(cfg, task_count), stage_cfg.start_stage, init_rng), kObsDim,
                 task_count, effective_sac(cfg), init_rng);
  Community community =
      make_community(task_count, stage_cfg.start_stage, cfg.precision, cfg.ga.population_size, ga_rng);
  StageTracker tracker(task_count, stage_cfg);
  ReplayBuffer buffer(kObsDim, kActionDim, cfg.sac.buffer_capacity, cfg.sac.reward_scale);

  std::vector<WeightPlan> plans;
  for (int t = 0; t < task_count; ++t) {
    plans.push_back(genotypes ? decode_to_weights(community.populations[static_cast<std::size_t>(t)].members.front(),
                                                  cfg.decode)
                              : chain_plan(1));
  }

  {
    auto out = open_output(out_dir / "config.json");
    out << cfg.to_json().dump(2) << '\n';
  }
  auto metrics = open_output(out_dir / "metrics.jsonl");
  auto sac_metrics = open_output(out_dir / "sac_metrics.jsonl");
  auto stages = open_output(out_dir / "stages.jsonl");
  auto timing = open_output(out_dir / "timing.csv");
  timing << "episode,wall_seconds\n";

  long episode = 0;
  long env_steps = 0;
  const auto started = std::chrono::steady_clock::now();
  std::uniform_real_distribution<double> warmup_action(-1.0, 1.0);

  auto snapshot = [&] {
    Checkpoint c;
    c.config = cfg;
    c.actor = agent.actor();
    c.critic = agent.critic();
    c.alpha = agent.alpha();
    c.community = community;
    c.tracker = tracker;
    c.episode = episode;
    c.env_steps = env_steps;
    for (const auto& s : streams) c.rng_states.push_back(rng_state(s));
    return c;
  };

  for (int round = 0; round < cfg.episodes_per_task; ++round) {
    for (int t = 0; t < task_count; ++t) {
      const auto& task = suite[static_cast<std::size_t>(t)];
      auto& pop = community.populations[static_cast<std::size_t>(t)];
      std::size_t member = 0;
      MetricsRecord rec;
      rec.episode = episode;
      rec.task_id = t;
      rec.stage = genotypes ? pop.stage : 1;
      if (genotypes) {
        member = select_for_episode(pop, cfg.ga, ga_rng);
        rec.genotype_id = pop.members[member].id;
        rec.genotype_length = pop.members[member].length();
        plans[static_cast<std::size_t>(t)] = decode_to_weights(pop.members[member], cfg.decode);
      }

      auto state = reset(task, env_rng);
      while (!state.done) {
        Eigen::VectorXd action(kActionDim);
        if (env_steps < cfg.warmup_steps) {
          for (Eigen::Index i = 0; i < action.size(); ++i) action[i] = warmup_action(act_rng);
        } else {
          action = agent.act(observe(state), t, plans[static_cast<std::size_t>(t)], false, act_rng);
        }
        auto result = step(task, state, action);
        // Only a captured final waypoint is terminal; running out of time is not.
        buffer.push(result.transition, result.transition.success);
        rec.episode_return += result.transition.reward;
        state = std::move(result.state);
        ++env_steps;
        if (env_steps >= cfg.warmup_steps) {
          if (auto m = agent.train_step(buffer, plans, sac_rng); m && m->step % cfg.metrics_every == 0) {
            sac_metrics << to_jsonl(*m);
          }
        }
      }
      rec.success = state.success;
      rec.module_count = agent.actor().module_count();
      metrics << to_jsonl(rec) << '\n';
      timing << episode << ','
             << std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() << '\n';

      if (genotypes) {
        record_fitness(pop, member, rec.episode_return);
        std::optional<double> generation_best;
        if (pop.all_evaluated(cfg.ga.max_eval)) {
          const auto report = cfg.ga_enabled ? evolve_population(community, static_cast<std::size_t>(t), cfg.ga, ga_rng)
                                             : resample_population(pop, ga_rng);
          generation_best = report.best_fitness;
        }
        const int old_stage = tracker.stage(t);
        if (update_stage(tracker, t, rec.success, generation_best) == StageChange::incremented) {
          purge_stale(pop, tracker.stage(t), cfg.precision, ga_rng);
          sync_network(tracker, agent.actor(), init_rng);
          stages << to_jsonl(StageEvent{episode, t, old_stage, tracker.stage(t), "stalled"}) << '\n';
        }
      }
      ++episode;
      if (cfg.checkpoint_every > 0 && episode % cfg.checkpoint_every == 0) {
        save_checkpoint(snapshot(), out_dir / "checkpoint.bin");
      }
    }
  }

  const Checkpoint final_state = snapshot();
  save_checkpoint(final_state, out_dir / "checkpoint.bin");

  TrainingReport report;
  report.episodes = episode;
  report.env_steps = env_steps;
  report.module_count = agent.actor().module_count();
  for (int t = 0; t < task_count; ++t) report.final_stages.push_back(genotypes ? tracker.stage(t) : 1);
  report.success = evaluate(final_state, cfg.eval_episodes);

  {
    auto out = open_output(out_dir / "success.csv");
    out << report.success.to_csv();
  }
  json summary;
  summary["suite"] = cfg.suite;
  summary["seed"] = cfg.seed;
  summary["baseline"] = cfg.baseline_name();
  json names = json::array();
  for (const auto& task : suite) names.push_back(task.name());
  summary["tasks"] = names;
  summary["final_stages"] = report.final_stages;
  summary["module_count"] = report.module_count;
  summary["episodes"] = report.episodes;
  summary["env_steps"] = report.env_steps;
  summary["suite_success"] = report.success.suite_mean;
  json rates = json::array();
  for (const auto& r : report.success.rows) rates.push_back(r.success_rate);
  summary["task_success"] = rates;
  {
    auto out = open_output(out_dir / "summary.json");
    out << summary.dump(2) << '\n';
  }
  return report;
}

// ---------------------------------------------------------------------------
// Inspection

UsageComparison compare_module_usage(const fs::path& run_a, const fs::path& run_b) {
  auto load = [](const fs::path& dir) {
    std::ifstream in(dir / "summary.json");
    if (!in) throw std::runtime_error("no summary.json in " + dir.string());
    return json::parse(in);
  };
  const auto a = load(run_a);
  const auto b = load(run_b);
  const auto tasks = a.at("tasks").get<std::vector<std::string>>();
  if (tasks != b.at("tasks").get<std::vector<std::string>>()) {
    throw StructuralError("compare: the runs cover different task sets");
  }
  const auto sa = a.at("final_stages").get<std::vector<int>>();
  const auto sb = b.at("final_stages").get<std::vector<int>>();
  if (sa.size() != tasks.size() || sb.size() != tasks.size()) throw StructuralError("compare: stage list length mismatch");

  UsageComparison out;
  double total = 0.0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    out.rows.push_back({static_cast<int>(t), tasks[t], sa[t], sb[t], sa[t] - sb[t]});
    total += sa[t] - sb[t];
  }
  out.mean_difference = tasks.empty() ? 0.0 : total / static_cast<double>(tasks.size());
  return out;
}

std::string dump_genotypes(const Checkpoint& ckpt) {
  std::string out = "task_id,stage,p_w,bitstring,fitness,eval_count\n";
  for (const auto& pop : ckpt.community.populations) {
    for (const auto& g : pop.members) {
      out += to_csv_line(pop.task_id, g);
      out += '\n';
    }
  }
  return out;
}

}  // namespace mega
