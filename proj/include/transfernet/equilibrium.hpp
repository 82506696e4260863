#pragma once
// Lower level: capacitated combined trip-distribution / mode / route choice
// logit equilibrium, solved by partial linearization (logit auxiliary loading
// plus convex-combination steps) with an outer multiplier loop enforcing hard
// transfer capacities.

#include <string>
#include <vector>

#include "transfernet/types.hpp"

namespace transfernet {

struct EquilibriumState {
  // Per active path (aligned with ActiveNetwork::paths).
  std::vector<double> f0;      // existing flow
  std::vector<double> fplus;   // newly generated flow
  // Per OdModeGroup (aligned with ActiveNetwork::od_modes).
  std::vector<double> q0_mode;
  std::vector<double> qplus_mode;
  // Per OD pair (aligned with Scenario::od).
  std::vector<double> q_plus;
  // Per link / active transfer.
  std::vector<double> link_flow, link_time;
  std::vector<double> transfer_flow, transfer_time, mu;
  // Objective components (reported) and solve record.
  double Z = 0, z1 = 0, z2 = 0, z3 = 0, z4 = 0, z5 = 0;
  double ttt = 0;
  double gap = 0;              // final auxiliary gap, relative to total demand
  long iterations = 0;         // inner iterations, all phases
  int outer_iterations = 0;    // multiplier updates
  bool converged = false;
  std::string message;
  // Inner objective value per iteration, one vector per fixed-multiplier
  // phase (recorded when SolverOptions::record_trace is set).
  std::vector<std::vector<double>> trace;
};

struct KktReport {
  double route_residual = 0;        // max |share - theta-logit share|
  double mode_residual = 0;         // max |share - gamma-logit share|
  double destination_residual = 0;  // max relative demand-stationarity error
  double conservation_residual = 0; // max relative conservation error
  double capacity_violation = 0;    // max relative hard-capacity excess
  bool pass = false;
};

// Time on a link at the given passenger flow (occupancy-adjusted).
double link_time(const CostFn& fn, double flow);

// Overflow-safe multinomial logit probabilities.
std::vector<double> logit_split(const std::vector<double>& costs, double scale);

// -1/scale * log(sum exp(-scale*costs)), max-shifted.
double logsum(const std::vector<double>& costs, double scale);

// Generalized cost of an active path: link times plus transfer times plus
// capacity duals mu.
double path_cost(const ActiveNetwork& net, int path,
                 const std::vector<double>& link_flows,
                 const std::vector<double>& transfer_flows,
                 const std::vector<double>& mu);

// Logit-consistent auxiliary solution at fixed path costs: demand generation,
// mode split, route split, and the existing-demand loading per policy.
struct AuxiliarySolution {
  std::vector<double> f0;         // per active path
  std::vector<double> fplus;      // per active path
  std::vector<double> q_plus;     // per OD
  std::vector<double> composite;  // per OD composite (perceived) cost
};
AuxiliarySolution auxiliary_demand(const ActiveNetwork& net,
                                   const std::vector<double>& path_costs,
                                   const BehaviorParams& params);

EquilibriumState solve_lower_level(const ActiveNetwork& net,
                                   const SolverOptions& opts);
EquilibriumState solve_lower_level(const ActiveNetwork& net,
                                   const BehaviorParams& params,
                                   const SolverOptions& opts);

// Reported objective: Z = z1+..+z5 with full route entropy in z1, transfer
// integrals in z2, mode entropy in z3, destination entropy in z4 and the
// inverse-demand integral in z5.
struct ObjectiveBreakdown {
  double Z, z1, z2, z3, z4, z5;
};
ObjectiveBreakdown objective_value(const EquilibriumState& st,
                                   const ActiveNetwork& net,
                                   const BehaviorParams& params);

KktReport kkt_check(const EquilibriumState& st, const ActiveNetwork& net,
                    const BehaviorParams& params, double tol);

// Experienced passenger-minutes: link flows times link times plus transfer
// flows times transfer times. Capacity duals are shadow prices and excluded.
double total_travel_time(const EquilibriumState& st, const ActiveNetwork& net);

namespace detail {
// Convex inner objective (conditional nested entropies + congestion
// integrals + mu * transfer flow) descended by the solver, and its gradient;
// exposed for property tests.
double internal_objective(const ActiveNetwork& net, const BehaviorParams& params,
                          const std::vector<double>& f0,
                          const std::vector<double>& fplus,
                          const std::vector<double>& mu, double eps);
std::vector<double> internal_gradient(const ActiveNetwork& net,
                                      const BehaviorParams& params,
                                      const std::vector<double>& f0,
                                      const std::vector<double>& fplus,
                                      const std::vector<double>& mu, double eps);
}  // namespace detail

}  // namespace transfernet
