#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mega/genotype.hpp"

namespace mega {

/// Genetic-algorithm settings. Defaults follow the 10-task column of the
/// reference hyperparameter table, except that abandonment needs
/// N_P * r_a to be even, so r_a = 2/3 at N_P = 3.
struct GaConfig {
  int population_size = 3;
  double abandon_rate = 2.0 / 3.0;
  double crossover_rate = 0.5;
  double mutate_rate = 0.15;
  double crossover_cross_population = 0.9;
  double mutate_cross_population = 0.95;
  double mutate_best = 0.5;
  int max_eval = 2;
  double p_best_select = 0.5;

  /// floor(N_P * r_a), guarded against representation error in r_a.
  int abandon_count() const;
  void validate() const;
};

struct TaskPopulation {
  int task_id = 0;
  int stage = 0;
  int precision = 0;
  std::vector<GenotypePolicy> members;
  std::optional<std::size_t> best_index;
  std::uint64_t next_id = 1;

  /// Tags `g` with the next serial id of this population.
  GenotypePolicy adopt(GenotypePolicy g);
  void refresh_best();
  bool all_evaluated(int max_eval) const;
  const GenotypePolicy& best() const;
};

/// Fresh population of random genotypes at `stage`.
TaskPopulation make_population(int task_id, int stage, int precision, int size, Rng& rng);

struct Community {
  std::vector<TaskPopulation> populations;

  std::size_t genotype_count() const;
  /// Uniform draw over every genotype of every population.
  const GenotypePolicy& random_genotype(Rng& rng) const;
};

Community make_community(int task_count, int stage, int precision, int size, Rng& rng);

/// Lowest-index member still under max_eval, otherwise the best with
/// probability p_best_select, otherwise a uniform member.
std::size_t select_for_episode(const TaskPopulation& pop, const GaConfig& cfg, Rng& rng);

/// Folds `episode_reward` into the member's running-mean fitness.
void record_fitness(TaskPopulation& pop, std::size_t index, double episode_reward);

/// Crossover parent choice for population `pop_index` given the draw
/// n in [0, 1].
std::pair<GenotypePolicy, GenotypePolicy> choose_crossover_parents(const Community& community,
                                                                    std::size_t pop_index, double threshold,
                                                                    double draw, Rng& rng);
std::pair<GenotypePolicy, GenotypePolicy> choose_crossover_parents(const Community& community,
                                                                    std::size_t pop_index, const GaConfig& cfg,
                                                                    Rng& rng);

/// Copy of the longer parent with `positions` overwritten from the shorter.
GenotypePolicy crossover_at(const GenotypePolicy& a, const GenotypePolicy& b, std::span<const std::size_t> positions);
GenotypePolicy crossover(const GenotypePolicy& a, const GenotypePolicy& b, double rate, Rng& rng);

GenotypePolicy choose_mutate_parent(const Community& community, std::size_t pop_index, double cross_threshold,
                                    double best_threshold, double draw, Rng& rng);
GenotypePolicy choose_mutate_parent(const Community& community, std::size_t pop_index, const GaConfig& cfg, Rng& rng);

/// Copy of `g` with the bits at `positions` flipped.
GenotypePolicy mutate_at(const GenotypePolicy& g, std::span<const std::size_t> positions);
GenotypePolicy mutate(const GenotypePolicy& g, double rate, Rng& rng);

/// `count` distinct positions in [0, length), uniformly chosen.
std::vector<std::size_t> choose_positions(std::size_t length, std::size_t count, Rng& rng);

struct GenerationReport {
  double best_fitness = 0.0;  // best fitness before abandonment
  std::vector<std::uint64_t> abandoned_ids;
  int stale_replaced = 0;
};

/// One generation for population `pop_index`: rank, abandon the worst,
/// refill with crossover and mutation children. Members whose length does
/// not match the population's stage are replaced by random genotypes
/// before ranking, and children of a foreign length are replaced the same
/// way after insertion.
GenerationReport evolve_population(Community& community, std::size_t pop_index, const GaConfig& cfg, Rng& rng);

/// Ablation without genetic operators: every member is redrawn at random.
GenerationReport resample_population(TaskPopulation& pop, Rng& rng);

}  // namespace mega
