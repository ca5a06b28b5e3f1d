#include "mega/ga.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mega {

int GaConfig::abandon_count() const {
  return static_cast<int>(std::floor(population_size * abandon_rate + 1e-9));
}

void GaConfig::validate() const {
  auto in_open_unit = [](double x) { return x > 0.0 && x < 1.0; };
  if (population_size < 1) throw ConfigError("population_size must be positive");
  if (!in_open_unit(abandon_rate)) throw ConfigError("abandon_rate must lie in (0, 1)");
  const int n = abandon_count();
  if (n < 2 || n % 2 != 0) throw ConfigError("population_size * abandon_rate must be an even number >= 2");
  if (n > population_size - 1) throw ConfigError("abandonment must leave the best genotype alive");
  if (crossover_rate < 0.0 || crossover_rate > 1.0) throw ConfigError("crossover_rate must lie in [0, 1]");
  if (mutate_rate < 0.0 || mutate_rate > 1.0) throw ConfigError("mutate_rate must lie in [0, 1]");
  if (!in_open_unit(crossover_cross_population)) throw ConfigError("crossover_cross_population must lie in (0, 1)");
  if (!(mutate_best > 0.0 && mutate_best < mutate_cross_population && mutate_cross_population < 1.0)) {
    throw ConfigError("need 0 < mutate_best < mutate_cross_population < 1");
  }
  if (max_eval < 1) throw ConfigError("max_eval must be positive");
  if (p_best_select < 0.0 || p_best_select > 1.0) throw ConfigError("p_best_select must lie in [0, 1]");
}

GenotypePolicy TaskPopulation::adopt(GenotypePolicy g) {
  g.id = next_id++;
  return g;
}

void TaskPopulation::refresh_best() {
  best_index.reset();
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& m = members[i];
    if (m.eval_count < 1) continue;
    if (!best_index || *m.fitness > *members[*best_index].fitness) best_index = i;
  }
}

bool TaskPopulation::all_evaluated(int max_eval) const {
  return std::all_of(members.begin(), members.end(), [&](const auto& m) { return m.eval_count >= max_eval; });
}

const GenotypePolicy& TaskPopulation::best() const {
  if (!best_index) throw StructuralError("population " + std::to_string(task_id) + " has no evaluated member");
  return members[*best_index];
}

TaskPopulation make_population(int task_id, int stage, int precision, int size, Rng& rng) {
  TaskPopulation pop;
  pop.task_id = task_id;
  pop.stage = stage;
  pop.precision = precision;
  for (int i = 0; i < size; ++i) pop.members.push_back(pop.adopt(mega::random_genotype(precision, stage, rng)));
  return pop;
}

std::size_t Community::genotype_count() const {
  std::size_t n = 0;
  for (const auto& p : populations) n += p.members.size();
  return n;
}

const GenotypePolicy& Community::random_genotype(Rng& rng) const {
  const auto total = genotype_count();
  if (total == 0) throw StructuralError("community is empty");
  auto k = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
  for (const auto& p : populations) {
    if (k < p.members.size()) return p.members[k];
    k -= p.members.size();
  }
  throw StructuralError("community draw out of range");
}

Community make_community(int task_count, int stage, int precision, int size, Rng& rng) {
  Community c;
  for (int t = 0; t < task_count; ++t) c.populations.push_back(make_population(t, stage, precision, size, rng));
  return c;
}

namespace {

std::size_t uniform_index(std::size_t n, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

double unit_draw(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace

std::size_t select_for_episode(const TaskPopulation& pop, const GaConfig& cfg, Rng& rng) {
  if (pop.members.empty()) throw StructuralError("select_for_episode: empty population");
  for (std::size_t i = 0; i < pop.members.size(); ++i) {
    if (pop.members[i].eval_count < cfg.max_eval) return i;
  }
  if (pop.best_index && unit_draw(rng) < cfg.p_best_select) return *pop.best_index;
  return uniform_index(pop.members.size(), rng);
}

void record_fitness(TaskPopulation& pop, std::size_t index, double episode_reward) {
  if (!std::isfinite(episode_reward)) throw std::invalid_argument("record_fitness: non-finite reward");
  auto& m = pop.members.at(index);
  const double previous = m.fitness.value_or(0.0);
  m.eval_count += 1;
  m.fitness = previous + (episode_reward - previous) / m.eval_count;
  pop.refresh_best();
}

std::pair<GenotypePolicy, GenotypePolicy> choose_crossover_parents(const Community& community,
                                                                    std::size_t pop_index, double threshold,
                                                                    double draw, Rng& rng) {
  const auto& pop = community.populations.at(pop_index);
  if (draw > threshold) return {pop.best(), community.random_genotype(rng)};
  const auto& first = pop.members[uniform_index(pop.members.size(), rng)];
  const auto& second = pop.members[uniform_index(pop.members.size(), rng)];
  return {first, second};
}

std::pair<GenotypePolicy, GenotypePolicy> choose_crossover_parents(const Community& community,
                                                                    std::size_t pop_index, const GaConfig& cfg,
                                                                    Rng& rng) {
  const double draw = unit_draw(rng);
  return choose_crossover_parents(community, pop_index, cfg.crossover_cross_population, draw, rng);
}

std::vector<std::size_t> choose_positions(std::size_t length, std::size_t count, Rng& rng) {
  if (count > length) throw StructuralError("choose_positions: more positions than bits");
  // partial Fisher-Yates
  std::vector<std::size_t> idx(length);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, length - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

namespace {

GenotypePolicy as_child(GenotypePolicy g) {
  g.fitness.reset();
  g.eval_count = 0;
  g.id = 0;
  return g;
}

}  // namespace

GenotypePolicy crossover_at(const GenotypePolicy& a, const GenotypePolicy& b, std::span<const std::size_t> positions) {
  const bool a_long = a.length() >= b.length();
  const auto& longer = a_long ? a : b;
  const auto& shorter = a_long ? b : a;
  GenotypePolicy child = as_child(longer);
  for (auto p : positions) {
    if (p >= shorter.length()) throw StructuralError("crossover position beyond the shorter parent");
    child.bits[p] = shorter.bits[p];
  }
  return child;
}

GenotypePolicy crossover(const GenotypePolicy& a, const GenotypePolicy& b, double rate, Rng& rng) {
  const auto shortest = std::min(a.length(), b.length());
  const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(shortest) * rate + 1e-9));
  const auto positions = choose_positions(shortest, n, rng);
  return crossover_at(a, b, positions);
}

GenotypePolicy choose_mutate_parent(const Community& community, std::size_t pop_index, double cross_threshold,
                                    double best_threshold, double draw, Rng& rng) {
  const auto& pop = community.populations.at(pop_index);
  if (draw > cross_threshold) return community.random_genotype(rng);
  if (draw > best_threshold) return pop.members[uniform_index(pop.members.size(), rng)];
  return pop.best();
}

GenotypePolicy choose_mutate_parent(const Community& community, std::size_t pop_index, const GaConfig& cfg, Rng& rng) {
  const double draw = unit_draw(rng);
  return choose_mutate_parent(community, pop_index, cfg.mutate_cross_population, cfg.mutate_best, draw, rng);
}

GenotypePolicy mutate_at(const GenotypePolicy& g, std::span<const std::size_t> positions) {
  GenotypePolicy child = as_child(g);
  for (auto p : positions) child.bits.at(p) ^= 1;
  return child;
}

GenotypePolicy mutate(const GenotypePolicy& g, double rate, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(g.length()) * rate + 1e-9));
  const auto positions = choose_positions(g.length(), n, rng);
  return mutate_at(g, positions);
}

namespace {

int replace_stale(TaskPopulation& pop, std::size_t first, Rng& rng) {
  const auto expected = genotype_length(pop.precision, pop.stage);
  int replaced = 0;
  for (std::size_t i = first; i < pop.members.size(); ++i) {
    auto& m = pop.members[i];
    if (m.length() != expected || m.precision != pop.precision) {
      m = pop.adopt(mega::random_genotype(pop.precision, pop.stage, rng));
      ++replaced;
    }
  }
  return replaced;
}

}  // namespace

GenerationReport evolve_population(Community& community, std::size_t pop_index, const GaConfig& cfg, Rng& rng) {
  cfg.validate();
  GenerationReport report;
  {
    auto& pop = community.populations.at(pop_index);
    if (static_cast<int>(pop.members.size()) != cfg.population_size) {
      throw StructuralError("evolve_population: population size differs from N_P");
    }
    report.stale_replaced = replace_stale(pop, 0, rng);
    pop.refresh_best();
    if (!pop.best_index) throw StructuralError("evolve_population: no evaluated member");
    const auto best = *pop.best_index;
    report.best_fitness = *pop.members[best].fitness;

    // Worst first; unevaluated members rank below everything.
    std::vector<std::size_t> order(pop.members.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto key = [&](std::size_t i) {
      return pop.members[i].fitness.value_or(-std::numeric_limits<double>::infinity());
    };
    std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return key(x) < key(y); });
    std::vector<std::size_t> doomed;
    for (auto i : order) {
      if (static_cast<int>(doomed.size()) == cfg.abandon_count()) break;
      if (i != best) doomed.push_back(i);
    }
    std::sort(doomed.rbegin(), doomed.rend());
    for (auto i : doomed) {
      report.abandoned_ids.push_back(pop.members[i].id);
      pop.members.erase(pop.members.begin() + static_cast<std::ptrdiff_t>(i));
    }
    pop.refresh_best();
  }

  const std::size_t survivors = community.populations[pop_index].members.size();
  for (int i = 0; i < cfg.abandon_count() / 2; ++i) {
    auto [p1, p2] = choose_crossover_parents(community, pop_index, cfg, rng);
    auto crossed = crossover(p1, p2, cfg.crossover_rate, rng);
    auto parent = choose_mutate_parent(community, pop_index, cfg, rng);
    auto mutated = mutate(parent, cfg.mutate_rate, rng);
    auto& pop = community.populations[pop_index];
    pop.members.push_back(pop.adopt(std::move(crossed)));
    pop.members.push_back(pop.adopt(std::move(mutated)));
  }
  auto& pop = community.populations[pop_index];
  report.stale_replaced += replace_stale(pop, survivors, rng);
  pop.refresh_best();
  return report;
}

GenerationReport resample_population(TaskPopulation& pop, Rng& rng) {
  GenerationReport report;
  pop.refresh_best();
  if (pop.best_index) report.best_fitness = *pop.members[*pop.best_index].fitness;
  for (auto& m : pop.members) {
    report.abandoned_ids.push_back(m.id);
    m = pop.adopt(mega::random_genotype(pop.precision, pop.stage, rng));
  }
  pop.best_index.reset();
  return report;
}

}  // namespace mega
