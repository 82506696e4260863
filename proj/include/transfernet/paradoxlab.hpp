#pragma once
// Experiment harness: before/after paradox comparison, theta and capacity
// sweeps, variable-demand share sweep, the two-candidate design landscape,
// and calibration of unobserved behavioral parameters.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "transfernet/design.hpp"
#include "transfernet/equilibrium.hpp"
#include "transfernet/types.hpp"

namespace transfernet {

struct ModeMetrics {
  std::string mode;
  double flow = 0.0;
  double cost = 0.0;  // experienced representative path cost (duals excluded)
};

struct ParadoxReport {
  double ttt_before = 0.0;
  double ttt_after = 0.0;
  std::vector<ModeMetrics> before_modes;
  std::vector<ModeMetrics> after_modes;
  bool paradox = false;   // ttt_after > ttt_before
  double delta = 0.0;     // ttt_after - ttt_before
};

struct SweepPoint {
  double value = 0.0;  // parameter value
  double ttt_before = 0.0;
  double ttt_after = 0.0;
  std::vector<ModeMetrics> modes;  // after-state shares/costs
  double generated = 0.0;
  double total_demand = 0.0;
};

struct SweepSeries {
  std::string parameter;
  std::vector<SweepPoint> points;
  std::optional<double> crossover;     // theta sweep: after first exceeds before
  std::vector<double> boundaries;      // capacity sweep: paradox sign changes
  std::optional<double> minimizer;     // capacity sweep: interior after-TTT min
};

struct ShareGrid {
  std::vector<double> bike_caps;
  std::vector<double> car_caps;
  // Row-major [bike][car].
  std::vector<std::vector<double>> share;
  std::vector<std::vector<char>> feasible;
  std::vector<std::vector<double>> fitness;
};

struct CalibrationTargets {
  std::map<std::string, double> mode_flows;  // before-state flows by mode
  std::optional<double> ttt;
};

struct CalibrationResult {
  BehaviorParams params;
  double transfer_time = 0.0;  // fitted constant transfer time, when free
  double occupancy = 1.0;
  double residual = 0.0;       // squared relative error at the optimum
  bool poor = false;
};

// The before state loads existing demand at its observed per-mode split (the
// do-nothing baseline); the after state applies the design under the
// scenario's existing-demand policy.
ParadoxReport before_after(const Scenario& s, const Design& after,
                           const BehaviorParams& params,
                           const SolverOptions& opts);

// theta sweep: theta, gamma and eta move together (the shipped scenarios tie
// all three scales).
SweepSeries sweep_theta(const Scenario& s, const Design& after,
                        const std::vector<double>& thetas,
                        const SolverOptions& opts);

SweepSeries sweep_capacity(const Scenario& s,
                           const std::vector<double>& capacities, double theta,
                           const SolverOptions& opts);

SweepSeries share_sweep(const Scenario& s,
                        const std::vector<double>& capacities,
                        const BehaviorParams& params, const SolverOptions& opts);

ShareGrid transit_share_grid(const Scenario& s,
                             const std::vector<double>& bike_caps,
                             const std::vector<double>& car_caps,
                             const SolverOptions& opts);

// Coordinate grid search plus golden-section refinement of the free
// parameters against before-state targets. Deterministic; ties keep the
// incumbent value.
CalibrationResult calibrate(const Scenario& s, const CalibrationTargets& targets,
                            const std::vector<std::string>& free_params,
                            const SolverOptions& opts);

// Evaluation-order-independent parallel map; worker count is capped by the
// TRANSFERNET_THREADS environment variable.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace transfernet
