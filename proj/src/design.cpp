#include "transfernet/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "transfernet/paradoxlab.hpp"
#include "transfernet/scenario.hpp"

namespace transfernet {

double construction_cost(const Design& d, const Scenario& s) {
  double cost = 0.0;
  for (const auto& tc : s.transfers) {
    const DesignChoice* c = d.find(tc.node, tc.mode);
    if (c && c->xi) cost += tc.fixed_cost + tc.unit_cost * c->capacity;
  }
  return cost;
}

std::vector<FeasibilityIssue> check_feasible(const Design& d, const Scenario& s) {
  std::vector<FeasibilityIssue> issues;
  for (const auto& c : d.items) {
    if (c.xi != 0 && c.xi != 1)
      issues.push_back({"binary", "xi for node '" + c.node + "' mode '" +
                                      c.mode + "' is " + std::to_string(c.xi)});
    int ti = s.transfer_index(c.node, c.mode);
    if (ti < 0) {
      issues.push_back({"capacity_bounds", "no candidate at node '" + c.node +
                                               "' mode '" + c.mode + "'"});
      continue;
    }
    const TransferCandidate& tc = s.transfers[ti];
    if (c.xi == 1 && (c.capacity < tc.c_min || c.capacity > tc.c_max))
      issues.push_back(
          {"capacity_bounds", "capacity " + std::to_string(c.capacity) +
                                  " at node '" + c.node + "' outside [" +
                                  std::to_string(tc.c_min) + ", " +
                                  std::to_string(tc.c_max) + "]"});
    if (c.xi == 0 && c.capacity != 0.0)
      issues.push_back({"capacity_bounds",
                        "closed candidate at node '" + c.node +
                            "' has nonzero capacity"});
  }
  double cost = construction_cost(d, s);
  if (cost > s.budget)
    issues.push_back({"budget", "construction cost " + std::to_string(cost) +
                                    " exceeds budget " +
                                    std::to_string(s.budget)});
  return issues;
}

std::pair<double, EquilibriumState> fitness(const Design& d, const Scenario& s,
                                            const SolverOptions& opts) {
  ActiveNetwork net = apply_design(s, d);
  EquilibriumState st = solve_lower_level(net, opts);
  double gen = std::accumulate(st.q_plus.begin(), st.q_plus.end(), 0.0);
  return {gen, std::move(st)};
}

Chromosome encode(const Design& d, const Scenario& s, double step) {
  Chromosome c;
  for (const auto& tc : s.transfers) {
    const DesignChoice* dc = d.find(tc.node, tc.mode);
    int xi = dc && dc->xi ? 1 : 0;
    int idx = 0;
    if (xi) {
      idx = static_cast<int>(std::lround((dc->capacity - tc.c_min) / step));
      int idx_max = static_cast<int>(std::ceil((tc.c_max - tc.c_min) / step));
      idx = std::clamp(idx, 0, idx_max);
    }
    c.genes.emplace_back(xi, idx);
  }
  return c;
}

Design decode(const Chromosome& c, const Scenario& s, double step) {
  if (c.genes.size() != s.transfers.size())
    throw ValidationError("chromosome length does not match candidate count");
  Design d;
  for (size_t i = 0; i < s.transfers.size(); ++i) {
    const TransferCandidate& tc = s.transfers[i];
    auto [xi, idx] = c.genes[i];
    DesignChoice dc;
    dc.node = tc.node;
    dc.mode = tc.mode;
    dc.xi = xi ? 1 : 0;
    dc.capacity = dc.xi ? std::min(tc.c_min + idx * step, tc.c_max) : 0.0;
    d.items.push_back(dc);
  }
  return d;
}

namespace {

using Key = std::vector<int>;

Key key_of(const Chromosome& c) {
  Key k;
  for (auto [xi, idx] : c.genes) {
    k.push_back(xi);
    k.push_back(xi ? idx : 0);
  }
  return k;
}

// Reduce an over-budget chromosome: shrink the open candidate with the
// steepest cost per capacity step, then start closing the most expensive ones.
void repair(Chromosome& c, const Scenario& s, double step, double budget) {
  auto cost_of = [&]() {
    double g = 0.0;
    for (size_t i = 0; i < s.transfers.size(); ++i) {
      if (!c.genes[i].first) continue;
      const TransferCandidate& tc = s.transfers[i];
      double cap = std::min(tc.c_min + c.genes[i].second * step, tc.c_max);
      g += tc.fixed_cost + tc.unit_cost * cap;
    }
    return g;
  };
  while (cost_of() > budget) {
    int pick = -1;
    double best = -1.0;
    for (size_t i = 0; i < s.transfers.size(); ++i) {
      if (!c.genes[i].first || c.genes[i].second <= 0) continue;
      double u = s.transfers[i].unit_cost * step;
      if (u > best) {
        best = u;
        pick = static_cast<int>(i);
      }
    }
    if (pick >= 0) {
      --c.genes[pick].second;
      continue;
    }
    // Everything open is already at its minimum capacity: close the most
    // expensive open candidate.
    pick = -1;
    best = -1.0;
    for (size_t i = 0; i < s.transfers.size(); ++i) {
      if (!c.genes[i].first) continue;
      const TransferCandidate& tc = s.transfers[i];
      double g = tc.fixed_cost + tc.unit_cost * tc.c_min;
      if (g > best) {
        best = g;
        pick = static_cast<int>(i);
      }
    }
    if (pick < 0) break;  // all closed, cost is zero
    c.genes[pick] = {0, 0};
  }
}

}  // namespace

GaResult ga_solve(const Scenario& s, const GaParams& params,
                  const SolverOptions& opts) {
  const int n = static_cast<int>(s.transfers.size());
  const double step = params.capacity_step;
  std::vector<int> idx_max(n);
  for (int i = 0; i < n; ++i)
    idx_max[i] = static_cast<int>(
        std::ceil((s.transfers[i].c_max - s.transfers[i].c_min) / step));

  std::mt19937_64 rng(params.seed);
  auto rnd_int = [&](int hi) {  // uniform in [0, hi]
    return static_cast<int>(rng() % static_cast<std::uint64_t>(hi + 1));
  };
  auto rnd01 = [&]() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  };

  const bool repairing = params.infeasible == GaParams::Infeasible::Repair;
  auto normalize = [&](Chromosome& c) {
    for (int i = 0; i < n; ++i) {
      c.genes[i].second = std::clamp(c.genes[i].second, 0, idx_max[i]);
      if (!c.genes[i].first) c.genes[i].second = 0;
    }
    if (repairing) repair(c, s, step, s.budget);
  };

  // Seeded population: the full design, the empty design, then random draws.
  std::vector<Chromosome> pop;
  pop.push_back(encode(full_design(s), s, step));
  normalize(pop.back());
  pop.push_back(encode(empty_design(s), s, step));
  normalize(pop.back());
  while (static_cast<int>(pop.size()) < params.population) {
    Chromosome c;
    for (int i = 0; i < n; ++i) {
      int xi = rnd_int(1);
      int idx = rnd_int(idx_max[i]);
      c.genes.emplace_back(xi, xi ? idx : 0);
    }
    normalize(c);
    pop.push_back(std::move(c));
  }

  std::map<Key, double> cache;
  long evals = 0;
  auto evaluate = [&](const std::vector<Chromosome>& gen) {
    std::vector<Key> keys;
    std::vector<const Chromosome*> todo;
    for (const auto& c : gen) {
      Key k = key_of(c);
      if (cache.count(k)) continue;
      bool seen = false;
      for (const auto& kk : keys) seen |= kk == k;
      if (seen) continue;
      keys.push_back(std::move(k));
      todo.push_back(&c);
    }
    std::vector<double> out(todo.size(), 0.0);
    parallel_for(static_cast<int>(todo.size()), [&](int i) {
      Design d = decode(*todo[i], s, step);
      double val;
      try {
        val = fitness(d, s, opts).first;
      } catch (const SolverError&) {
        val = -std::numeric_limits<double>::infinity();
      }
      if (!repairing) {
        double over = construction_cost(d, s) - s.budget;
        if (over > 0.0) val -= params.penalty_weight * over;
      }
      out[i] = val;
    });
    for (size_t i = 0; i < todo.size(); ++i) cache[keys[i]] = out[i];
    evals += static_cast<long>(todo.size());
  };
  auto score = [&](const Chromosome& c) { return cache.at(key_of(c)); };

  GaResult res;
  double best_fit = -std::numeric_limits<double>::infinity();
  Chromosome best_chrom;
  for (int g = 0; g <= params.generations; ++g) {
    evaluate(pop);
    // Rank (stable: ties keep earlier individuals first).
    std::vector<int> order(pop.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return score(pop[a]) > score(pop[b]);
    });
    double gbest = score(pop[order[0]]);
    double mean = 0.0;
    for (const auto& c : pop) mean += score(c);
    mean /= static_cast<double>(pop.size());
    res.history.push_back({g, gbest, mean, evals});
    if (gbest > best_fit) {
      best_fit = gbest;
      best_chrom = pop[order[0]];
    }
    if (g == params.generations) break;

    std::vector<Chromosome> next;
    for (int e = 0; e < params.elitism && e < static_cast<int>(pop.size()); ++e)
      next.push_back(pop[order[e]]);
    auto tournament = [&]() -> const Chromosome& {
      int best_i = rnd_int(static_cast<int>(pop.size()) - 1);
      for (int t = 1; t < params.tournament; ++t) {
        int j = rnd_int(static_cast<int>(pop.size()) - 1);
        if (score(pop[j]) > score(pop[best_i])) best_i = j;
      }
      return pop[best_i];
    };
    while (static_cast<int>(next.size()) < params.population) {
      Chromosome a = tournament();
      Chromosome b = tournament();
      if (rnd01() < params.crossover_rate) {
        for (int i = 0; i < n; ++i)
          if (rnd01() < 0.5) std::swap(a.genes[i], b.genes[i]);
      }
      for (Chromosome* c : {&a, &b}) {
        for (int i = 0; i < n; ++i) {
          if (rnd01() < params.mutation_rate) {
            if (rnd01() < 0.5)
              c->genes[i].first ^= 1;
            else
              c->genes[i].second = rnd_int(idx_max[i]);
          }
        }
        normalize(*c);
        if (static_cast<int>(next.size()) < params.population)
          next.push_back(*c);
      }
    }
    pop = std::move(next);
  }

  res.best = decode(best_chrom, s, step);
  res.best_fitness = best_fit;
  res.evaluations = evals;
  if (std::isfinite(best_fit)) {
    auto [gen, st] = fitness(res.best, s, opts);
    res.best_state = std::move(st);
  }
  return res;
}

}  // namespace transfernet
