#pragma once
// Core data model for the multimodal transfer-network solver suite.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace transfernet {

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Separable link performance function t(v): either a constant time or a
// polynomial congestion curve t0 + alpha*(v/kappa)^beta.
struct CostFn {
  enum class Kind { Constant, Poly };
  Kind kind = Kind::Constant;
  double t0 = 0.0;
  double alpha = 0.0;
  double kappa = 1.0;
  double beta = 1.0;

  double value(double v) const {
    if (kind == Kind::Constant) return t0;
    return t0 + alpha * std::pow(v / kappa, beta);
  }
  // Closed-form antiderivative evaluated from 0 to v.
  double integral(double v) const {
    if (kind == Kind::Constant) return t0 * v;
    return t0 * v + alpha * kappa / (beta + 1.0) * std::pow(v / kappa, beta + 1.0);
  }
  double derivative(double v) const {
    if (kind == Kind::Constant) return 0.0;
    if (beta == 1.0) return alpha / kappa;
    return alpha * beta / kappa * std::pow(v / kappa, beta - 1.0);
  }
};

struct Link {
  std::string id;
  std::string from;
  std::string to;
  std::string subnetwork;
  CostFn cost;
  double soft_capacity = std::numeric_limits<double>::infinity();  // informational
  double occupancy = 1.0;  // persons per vehicle; divides flow fed to cost fn
};

struct Mode {
  std::string id;
  bool combined = false;                // false: single-subnetwork mode
  std::vector<std::string> legs;        // subnetworks traversed, in order
};

// A candidate transfer point (node, combined mode) that a design may open with
// a hard capacity in [c_min, c_max].
struct TransferCandidate {
  std::string node;
  std::string mode;
  double c_min = 0.0;
  double c_max = 0.0;
  double fixed_cost = 0.0;
  double unit_cost = 0.0;
  CostFn transfer_time;  // experienced transfer time as a function of transfer flow
};

struct Path {
  std::string id;
  std::string origin;
  std::string destination;
  std::string mode;
  std::vector<std::string> nodes;
  std::vector<std::string> links;      // link ids, in traversal order
  std::vector<std::string> transfers;  // transfer node ids crossed
};

struct OdDemand {
  std::string origin;
  std::string destination;
  double q0 = 0.0;                       // existing demand
  std::map<std::string, double> split;   // existing per-mode demand (sums to q0)
  // Linear inverse demand h(x) = a - b*x for newly generated trips on this OD
  // pair (falls back to the destination's parameters when absent).
  std::optional<double> a;
  std::optional<double> b;
};

struct OriginSpec {
  std::string id;
  double o0 = 0.0;
  double o_max = 0.0;
};

struct DestinationSpec {
  std::string id;
  double d0 = 0.0;
  double d_max = 0.0;
  double a = 0.0;
  double b = 0.0;
};

struct BehaviorParams {
  double theta = 1.0;  // route choice scale
  double gamma = 1.0;  // mode choice scale
  double eta = 1.0;    // destination choice scale
};

// How the existing demand q0 behaves when the network changes:
//   FixedMode : per-mode totals stay at the observed split; only the route
//               within each mode is re-chosen.
//   FixedTotal: the OD total stays fixed but travelers re-choose mode and route.
enum class Policy { FixedMode, FixedTotal };

struct SolverOptions {
  int max_outer = 20000;        // capacity-multiplier updates
  long max_inner = 2000000;     // partial-linearization iterations per phase
  double rel_gap = 1e-9;        // convergence tolerance, relative to total demand
  double penalty_growth = 2.0;  // bracket growth for the multiplier search (>1)
  enum class Step { Msa, Armijo } step = Step::Armijo;
  double entropy_eps = 1e-12;   // floor inside logarithms
  double rho = 0.02;            // multiplier subgradient step
  bool record_trace = false;    // record the inner objective per iteration
};

struct Scenario {
  std::string name;
  std::vector<std::string> nodes;
  std::vector<Link> links;
  std::vector<Mode> modes;
  std::vector<TransferCandidate> transfers;
  std::vector<Path> paths;
  std::vector<OdDemand> od;
  std::vector<OriginSpec> origins;
  std::vector<DestinationSpec> destinations;
  BehaviorParams behavior;
  double budget = 0.0;
  Policy policy = Policy::FixedMode;
  SolverOptions solver;

  int link_index(const std::string& id) const;
  int mode_index(const std::string& id) const;
  int transfer_index(const std::string& node, const std::string& mode) const;
  const OriginSpec* origin(const std::string& id) const;
  const DestinationSpec* destination(const std::string& id) const;
};

// Upper-level decision: which candidates open, at what capacity.
struct DesignChoice {
  std::string node;
  std::string mode;
  int xi = 0;
  double capacity = 0.0;
};

struct Design {
  std::vector<DesignChoice> items;
  const DesignChoice* find(const std::string& node, const std::string& mode) const {
    for (const auto& d : items)
      if (d.node == node && d.mode == mode) return &d;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Resolved view of a scenario under a given design.

struct ActiveTransfer {
  int candidate = -1;   // index into Scenario::transfers
  double capacity = 0.0;
};

struct ActivePath {
  int scenario_path = -1;      // index into Scenario::paths
  int od = -1;                 // index into Scenario::od
  int mode = -1;               // index into Scenario::modes
  std::vector<int> links;      // indices into Scenario::links
  std::vector<int> transfers;  // indices into ActiveNetwork::transfers
};

struct OdModeGroup {
  int od = -1;
  int mode = -1;
  std::vector<int> paths;  // indices into ActiveNetwork::paths
};

struct ActiveNetwork {
  const Scenario* scenario = nullptr;
  Design design;
  std::vector<ActiveTransfer> transfers;
  std::vector<ActivePath> paths;
  std::vector<OdModeGroup> od_modes;
  std::vector<std::vector<int>> od_mode_groups;  // per od: indices into od_modes
  // Origin grouping for the demand-generation level.
  std::vector<std::vector<int>> origin_ods;      // per origins index: od indices
};

}  // namespace transfernet
