#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "mega/harness.hpp"

using namespace mega;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mega_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.episodes_per_task = 6;
  cfg.warmup_steps = 300;
  cfg.metrics_every = 100;
  cfg.eval_episodes = 2;
  cfg.sac.batch_size = 16;
  cfg.sac.critic_hidden = {16, 16};
  cfg.net.module_dim = 8;
  cfg.net.embed_hidden = 8;
  cfg.net.module_hidden = 4;
  return cfg;
}

// Grows stages as fast as the rule allows.
RunConfig eager_growth_config() {
  RunConfig cfg = tiny_config();
  cfg.episodes_per_task = 12;
  cfg.stage.window = 2;
  cfg.stage.min_success = 1.0;
  cfg.stage.generation_window = 1;
  cfg.stage.cooldown = 0;
  cfg.stage.stage_cap = 6;
  cfg.fitness_epsilon_fraction = 10.0;
  return cfg;
}

}  // namespace

TEST_CASE("RunConfig") {
  const RunConfig defaults;
  CHECK_NOTHROW(defaults.validate());
  CHECK(defaults.sac.gamma == 0.99);
  CHECK(defaults.sac.actor_lr == 3e-4);
  CHECK(defaults.sac.alpha_lr == 1e-4);
  CHECK(defaults.sac.tau == 0.005);
  CHECK(defaults.stage.start_stage == 3);
  CHECK(defaults.ga.population_size == 3);
  CHECK(defaults.precision == 2);

  auto cfg = RunConfig::from_json({{"suite", "mt8-rand"}, {"baseline", "fixed-5"}, {"decode", "softmax"}, {"ga", false}});
  CHECK(cfg.suite == "mt8-rand");
  CHECK(cfg.baseline == Baseline::fixed);
  CHECK(cfg.fixed_modules == 5);
  CHECK(cfg.decode == WeightMode::softmax);
  CHECK_FALSE(cfg.ga_enabled);

  const auto again = RunConfig::from_json(cfg.to_json());
  CHECK(again.to_json() == cfg.to_json());

  CHECK_THROWS_AS(RunConfig::from_json({{"batchsize", 3}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"batch_size", "large"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"baseline", "fixed-x"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"baseline", "fixed-2"}}).validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"suite", "mt3-fixed"}}).validate(), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"abandon_rate", 0.5}}).validate(), ConfigError);

  cfg.merge(parse_override("batch_size=32"));
  cfg.merge(parse_override("suite=mt4-rand"));
  cfg.merge(parse_override("critic_hidden=[8,8]"));
  CHECK(cfg.sac.batch_size == 32);
  CHECK(cfg.suite == "mt4-rand");
  CHECK(cfg.sac.critic_hidden == std::vector<int>{8, 8});
  CHECK_THROWS_AS(parse_override("novalue"), ConfigError);
}

TEST_CASE("evaluate bookkeeping") {
  auto suite = make_suite("mt4-rand", 3);
  Rng rng(1);
  auto table = evaluate_policy(suite, scripted_action, 5, rng);
  CHECK(table.rows.size() == suite.size());
  for (const auto& r : table.rows) CHECK(r.success_rate == 1.0);
  CHECK(table.suite_mean == 1.0);

  auto idle = evaluate_policy(
      suite, [](const TaskInstance&, const EnvState&) { return Eigen::VectorXd::Zero(kActionDim).eval(); }, 2, rng);
  CHECK(idle.suite_mean == 0.0);
  CHECK(idle.to_csv().starts_with("task_id,task,episodes,success_rate,stdev\n0,reach,2,0.000000"));
}

TEST_CASE("training run artifacts") {
  const auto dir = scratch_dir("run");
  auto cfg = tiny_config();
  const auto report = run_training(cfg, dir);
  for (const auto* name : {"config.json", "metrics.jsonl", "sac_metrics.jsonl", "stages.jsonl", "timing.csv",
                           "checkpoint.bin", "success.csv", "summary.json"}) {
    CHECK(fs::exists(dir / name));
  }
  CHECK(report.episodes == 24);
  CHECK(report.success.rows.size() == 4);

  const auto metrics = read_jsonl(dir / "metrics.jsonl");
  REQUIRE(metrics.size() == 24);
  for (std::size_t e = 0; e < metrics.size(); ++e) {
    CHECK(metrics[e]["episode"] == e);
    CHECK(metrics[e]["task_id"] == e % 4);
    CHECK_FALSE(metrics[e].contains("wall_time"));
  }

  SUBCASE("checkpoint round trip") {
    const auto ckpt = load_checkpoint(dir / "checkpoint.bin");
    CHECK(ckpt.episode == 24);
    CHECK(ckpt.rng_states.size() == 6);
    save_checkpoint(ckpt, dir / "copy.bin");
    CHECK(slurp(dir / "copy.bin") == slurp(dir / "checkpoint.bin"));
    CHECK(evaluate(ckpt, 3).to_csv() == evaluate(load_checkpoint(dir / "copy.bin"), 3).to_csv());
    CHECK(evaluate(ckpt, cfg.eval_episodes).to_csv() == slurp(dir / "success.csv"));

    // Several checkpoints report a spread.
    auto table = evaluate(std::vector<Checkpoint>{ckpt, ckpt}, 2);
    CHECK(table.rows.size() == 4);
    CHECK(table.suite_stdev == 0.0);

    // Corruption is detected.
    auto bytes = slurp(dir / "checkpoint.bin");
    std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.bin"), StructuralError);
    bytes[9] = 7;  // version field
    std::ofstream(dir / "version.bin", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir / "version.bin"), StructuralError);
  }

  SUBCASE("stage and network mismatch is rejected") {
    auto ckpt = load_checkpoint(dir / "checkpoint.bin");
    ckpt.community.populations[0].stage = ckpt.actor.module_count() + 1;
    CHECK_THROWS_AS(evaluate(ckpt, 1), StructuralError);
  }

  SUBCASE("genotype dump") {
    const auto ckpt = load_checkpoint(dir / "checkpoint.bin");
    std::istringstream in(dump_genotypes(ckpt));
    std::string line;
    std::getline(in, line);
    CHECK(line == "task_id,stage,p_w,bitstring,fitness,eval_count");
    int rows = 0;
    while (std::getline(in, line)) {
      const auto parsed = parse_csv_line(line);
      CHECK(parsed.genotype.length() == genotype_length(2, parsed.genotype.stage));
      ++rows;
    }
    CHECK(rows == 4 * cfg.ga.population_size);
  }
}

TEST_CASE("identical seeds give identical metrics") {
  auto cfg = tiny_config();
  cfg.seed = 11;
  const auto a = scratch_dir("det_a");
  const auto b = scratch_dir("det_b");
  run_training(cfg, a);
  run_training(cfg, b);
  for (const auto* name : {"metrics.jsonl", "sac_metrics.jsonl", "stages.jsonl", "checkpoint.bin", "summary.json"}) {
    CHECK(slurp(a / name) == slurp(b / name));
  }
  cfg.seed = 12;
  const auto c = scratch_dir("det_c");
  run_training(cfg, c);
  CHECK(slurp(a / "metrics.jsonl") != slurp(c / "metrics.jsonl"));
}

TEST_CASE("stage growth keeps genotypes, stages and the network consistent") {
  const auto dir = scratch_dir("growth");
  const auto report = run_training(eager_growth_config(), dir);
  const auto metrics = read_jsonl(dir / "metrics.jsonl");
  int last_modules = 0;
  for (const auto& m : metrics) {
    CHECK(m["genotype_length"] == genotype_length(2, m["stage"].get<int>()));
    CHECK(m["module_count"].get<int>() >= last_modules);
    CHECK(m["module_count"].get<int>() >= m["stage"].get<int>());
    last_modules = m["module_count"];
  }
  const auto events = read_jsonl(dir / "stages.jsonl");
  CHECK_FALSE(events.empty());
  for (const auto& e : events) CHECK(e["new_stage"] == e["old_stage"].get<int>() + 1);
  CHECK(report.module_count == *std::max_element(report.final_stages.begin(), report.final_stages.end()));

  const auto ckpt = load_checkpoint(dir / "checkpoint.bin");
  for (int t = 0; t < 4; ++t) {
    for (const auto& g : ckpt.community.populations[static_cast<std::size_t>(t)].members) {
      CHECK(g.stage == ckpt.tracker.stage(t));
    }
  }
}

TEST_CASE("modes") {
  SUBCASE("mtsac uses one module on state and task one-hot") {
    auto cfg = tiny_config();
    cfg.baseline = Baseline::mtsac;
    const auto dir = scratch_dir("mtsac");
    const auto report = run_training(cfg, dir);
    const auto ckpt = load_checkpoint(dir / "checkpoint.bin");
    CHECK(ckpt.actor.module_count() == 1);
    CHECK(ckpt.actor.dims().state_dim == kObsDim + 4);
    CHECK(report.final_stages == std::vector<int>{1, 1, 1, 1});
    for (const auto& m : read_jsonl(dir / "metrics.jsonl")) CHECK(m["genotype_id"] == 0);
  }

  SUBCASE("fixed-K pins every stage") {
    auto cfg = eager_growth_config();
    cfg.baseline = Baseline::fixed;
    cfg.fixed_modules = 4;
    const auto report = run_training(cfg, scratch_dir("fixed"));
    CHECK(report.final_stages == std::vector<int>{4, 4, 4, 4});
    CHECK(report.module_count == 4);
  }

  SUBCASE("evolution off pins the start stage") {
    auto cfg = eager_growth_config();
    cfg.evolution = false;
    const auto report = run_training(cfg, scratch_dir("noevo"));
    CHECK(report.final_stages == std::vector<int>{3, 3, 3, 3});
  }

  SUBCASE("ga off draws fresh genotypes every generation") {
    auto cfg = tiny_config();
    cfg.ga_enabled = false;
    cfg.episodes_per_task = 12;
    const auto dir = scratch_dir("gaoff");
    run_training(cfg, dir);
    // With resampling every member of a generation is new, so a genotype id
    // is never used again once its generation has ended.
    std::map<int, std::vector<std::uint64_t>> ids;
    for (const auto& m : read_jsonl(dir / "metrics.jsonl")) ids[m["task_id"]].push_back(m["genotype_id"]);
    for (const auto& [task, seq] : ids) {
      std::set<std::uint64_t> seen(seq.begin(), seq.end());
      CHECK(seen.size() >= seq.size() / static_cast<std::size_t>(cfg.ga.max_eval));
      CHECK(*seen.rbegin() > static_cast<std::uint64_t>(cfg.ga.population_size));
    }
  }
}

TEST_CASE("compare_module_usage") {
  const auto a = scratch_dir("cmp_a");
  const auto b = scratch_dir("cmp_b");
  run_training(eager_growth_config(), a);
  auto fixed = tiny_config();
  fixed.baseline = Baseline::fixed;
  fixed.fixed_modules = 16;
  fixed.episodes_per_task = 1;
  run_training(fixed, b);

  const auto same = compare_module_usage(a, a);
  CHECK(same.rows.size() == 4);
  for (const auto& r : same.rows) CHECK(r.difference == 0);
  CHECK(same.mean_difference == 0.0);

  const auto diff = compare_module_usage(a, b);
  CHECK(diff.rows.size() == 4);
  CHECK(diff.mean_difference < 0.0);
  for (const auto& r : diff.rows) CHECK(r.difference == r.stage_a - 16);

  auto other = tiny_config();
  other.suite = "mt8-fixed";
  other.episodes_per_task = 1;
  const auto c = scratch_dir("cmp_c");
  run_training(other, c);
  CHECK_THROWS_AS(compare_module_usage(a, c), StructuralError);
}
