#pragma once
// Upper level: budget-feasible transfer location/capacity search via a
// Genetic Algorithm whose fitness is the generated-trip total of the lower
// level.

#include <cstdint>
#include <string>
#include <vector>

#include "transfernet/equilibrium.hpp"
#include "transfernet/types.hpp"

namespace transfernet {

struct GaParams {
  int population = 30;
  int generations = 100;
  double crossover_rate = 0.8;
  double mutation_rate = 0.1;
  double capacity_step = 50.0;  // capacity gene discretization, in spaces
  int tournament = 3;
  int elitism = 2;
  std::uint64_t seed = 42;
  enum class Infeasible { Repair, Penalty } infeasible = Infeasible::Repair;
  double penalty_weight = 1e-3;  // fitness penalty per currency unit over budget
};

struct GaGeneration {
  int generation = 0;
  double best = 0.0;
  double mean = 0.0;
  long evaluations = 0;  // cumulative lower-level solves
};

struct GaResult {
  Design best;
  double best_fitness = 0.0;
  std::vector<GaGeneration> history;
  long evaluations = 0;
  EquilibriumState best_state;
};

struct FeasibilityIssue {
  std::string constraint;  // "budget" | "capacity_bounds" | "binary"
  std::string detail;
};

double construction_cost(const Design& d, const Scenario& s);
std::vector<FeasibilityIssue> check_feasible(const Design& d, const Scenario& s);

// Applies the design, solves the lower level and returns the generated-trip
// total. Throws SolverError when the design cannot be applied.
std::pair<double, EquilibriumState> fitness(const Design& d, const Scenario& s,
                                            const SolverOptions& opts);

GaResult ga_solve(const Scenario& s, const GaParams& params,
                  const SolverOptions& opts);

// Chromosome <-> design mapping (exposed for tests). A gene is (xi, capacity
// index); capacity = min(c_min + index*step, c_max).
struct Chromosome {
  std::vector<std::pair<int, int>> genes;
};
Chromosome encode(const Design& d, const Scenario& s, double step);
Design decode(const Chromosome& c, const Scenario& s, double step);

}  // namespace transfernet
