#include "transfernet/paradoxlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "transfernet/scenario.hpp"

namespace transfernet {

void parallel_for(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  int workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers <= 0) workers = 1;
  if (const char* env = std::getenv("TRANSFERNET_THREADS")) {
    int requested = std::atoi(env);
    if (requested > 0) workers = requested;
  }
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

namespace {

// Subnetworks reached after a transfer: the non-initial legs of the combined
// modes. Paths touching them count toward the transit share.
std::set<std::string> transit_subnetworks(const Scenario& s) {
  std::set<std::string> subs;
  for (const Mode& m : s.modes)
    if (m.combined)
      for (size_t i = 1; i < m.legs.size(); ++i) subs.insert(m.legs[i]);
  return subs;
}

std::vector<ModeMetrics> mode_metrics(const ActiveNetwork& net,
                                      const EquilibriumState& st) {
  const Scenario& s = *net.scenario;
  // Experienced path costs: duals excluded, congested transfer time included.
  std::vector<double> zero_mu(net.transfers.size(), 0.0);
  std::vector<double> costs(net.paths.size());
  for (size_t p = 0; p < net.paths.size(); ++p)
    costs[p] = path_cost(net, static_cast<int>(p), st.link_flow,
                         st.transfer_flow, zero_mu);
  std::vector<ModeMetrics> out;
  for (size_t m = 0; m < s.modes.size(); ++m) {
    double flow = 0.0, wcost = 0.0, cmin = std::numeric_limits<double>::max();
    bool present = false;
    for (size_t p = 0; p < net.paths.size(); ++p) {
      if (net.paths[p].mode != static_cast<int>(m)) continue;
      present = true;
      double f = st.f0[p] + st.fplus[p];
      flow += f;
      wcost += f * costs[p];
      cmin = std::min(cmin, costs[p]);
    }
    if (!present) continue;
    ModeMetrics mm;
    mm.mode = s.modes[m].id;
    mm.flow = flow;
    mm.cost = flow > 1e-12 ? wcost / flow : cmin;
    out.push_back(mm);
  }
  return out;
}

double generated_total(const EquilibriumState& st) {
  return std::accumulate(st.q_plus.begin(), st.q_plus.end(), 0.0);
}

double existing_total(const Scenario& s) {
  double q = 0.0;
  for (const auto& od : s.od) q += od.q0;
  return q;
}

double transit_share(const ActiveNetwork& net, const EquilibriumState& st) {
  const Scenario& s = *net.scenario;
  std::set<std::string> subs = transit_subnetworks(s);
  double total = 0.0, transit = 0.0;
  for (size_t p = 0; p < net.paths.size(); ++p) {
    double f = st.f0[p] + st.fplus[p];
    total += f;
    bool uses = false;
    for (int li : net.paths[p].links)
      if (subs.count(s.links[li].subnetwork)) uses = true;
    if (uses) transit += f;
  }
  return total > 0.0 ? transit / total : 0.0;
}

// Opens the i-th candidate at the given capacity, everything else closed.
Design single_candidate_design(const Scenario& s, size_t idx, double cap) {
  Design d = empty_design(s);
  d.items[idx].xi = 1;
  d.items[idx].capacity = std::clamp(cap, s.transfers[idx].c_min,
                                     s.transfers[idx].c_max);
  return d;
}

}  // namespace

ParadoxReport before_after(const Scenario& s, const Design& after,
                           const BehaviorParams& params,
                           const SolverOptions& opts) {
  // Do-nothing baseline: existing demand stays at its observed per-mode split.
  Scenario before = s;
  before.behavior = params;
  before.policy = Policy::FixedMode;
  ActiveNetwork bnet = apply_design(before, empty_design(before));
  EquilibriumState bst = solve_lower_level(bnet, opts);

  Scenario after_s = s;
  after_s.behavior = params;
  ActiveNetwork anet = apply_design(after_s, after);
  EquilibriumState ast = solve_lower_level(anet, opts);

  ParadoxReport rep;
  rep.ttt_before = bst.ttt;
  rep.ttt_after = ast.ttt;
  rep.before_modes = mode_metrics(bnet, bst);
  rep.after_modes = mode_metrics(anet, ast);
  rep.delta = ast.ttt - bst.ttt;
  rep.paradox = rep.delta > 0.0;
  return rep;
}

SweepSeries sweep_theta(const Scenario& s, const Design& after,
                        const std::vector<double>& thetas,
                        const SolverOptions& opts) {
  SweepSeries ser;
  ser.parameter = "theta";
  ser.points.resize(thetas.size());
  parallel_for(static_cast<int>(thetas.size()), [&](int i) {
    BehaviorParams p{thetas[i], thetas[i], thetas[i]};
    ParadoxReport rep = before_after(s, after, p, opts);
    SweepPoint& pt = ser.points[i];
    pt.value = thetas[i];
    pt.ttt_before = rep.ttt_before;
    pt.ttt_after = rep.ttt_after;
    pt.modes = rep.after_modes;
    pt.total_demand = existing_total(s);
  });
  for (size_t i = 0; i + 1 < ser.points.size(); ++i) {
    double d0 = ser.points[i].ttt_after - ser.points[i].ttt_before;
    double d1 = ser.points[i + 1].ttt_after - ser.points[i + 1].ttt_before;
    if (d0 < 0.0 && d1 >= 0.0) {
      double t = d1 == d0 ? 0.0 : -d0 / (d1 - d0);
      ser.crossover =
          ser.points[i].value + t * (ser.points[i + 1].value - ser.points[i].value);
      break;
    }
  }
  return ser;
}

SweepSeries sweep_capacity(const Scenario& s,
                           const std::vector<double>& capacities, double theta,
                           const SolverOptions& opts) {
  if (s.transfers.empty())
    throw ValidationError("capacity sweep requires a transfer candidate");
  SweepSeries ser;
  ser.parameter = "capacity";
  ser.points.resize(capacities.size());
  BehaviorParams p{theta, theta, theta};
  parallel_for(static_cast<int>(capacities.size()), [&](int i) {
    Design d = single_candidate_design(s, 0, capacities[i]);
    ParadoxReport rep = before_after(s, d, p, opts);
    SweepPoint& pt = ser.points[i];
    pt.value = capacities[i];
    pt.ttt_before = rep.ttt_before;
    pt.ttt_after = rep.ttt_after;
    pt.modes = rep.after_modes;
    pt.total_demand = existing_total(s);
  });
  for (size_t i = 0; i + 1 < ser.points.size(); ++i) {
    double d0 = ser.points[i].ttt_after - ser.points[i].ttt_before;
    double d1 = ser.points[i + 1].ttt_after - ser.points[i + 1].ttt_before;
    if ((d0 > 0.0) != (d1 > 0.0) && d1 != d0) {
      double t = -d0 / (d1 - d0);
      ser.boundaries.push_back(ser.points[i].value +
                               t * (ser.points[i + 1].value - ser.points[i].value));
    }
  }
  size_t best = 0;
  for (size_t i = 1; i < ser.points.size(); ++i)
    if (ser.points[i].ttt_after < ser.points[best].ttt_after) best = i;
  if (best > 0 && best + 1 < ser.points.size())
    ser.minimizer = ser.points[best].value;
  return ser;
}

SweepSeries share_sweep(const Scenario& s, const std::vector<double>& capacities,
                        const BehaviorParams& params, const SolverOptions& opts) {
  if (s.transfers.empty())
    throw ValidationError("share sweep requires a transfer candidate");
  Scenario sc = s;
  sc.behavior = params;
  SweepSeries ser;
  ser.parameter = "capacity";
  ser.points.resize(capacities.size());
  // Surface infeasible capacities deterministically before going parallel.
  std::vector<ActiveNetwork> nets(capacities.size());
  for (size_t i = 0; i < capacities.size(); ++i)
    nets[i] = apply_design(sc, single_candidate_design(sc, 0, capacities[i]));
  parallel_for(static_cast<int>(capacities.size()), [&](int i) {
    EquilibriumState st = solve_lower_level(nets[i], opts);
    SweepPoint& pt = ser.points[i];
    pt.value = capacities[i];
    pt.ttt_after = st.ttt;
    pt.modes = mode_metrics(nets[i], st);
    pt.generated = generated_total(st);
    pt.total_demand = existing_total(sc) + pt.generated;
  });
  return ser;
}

ShareGrid transit_share_grid(const Scenario& s,
                             const std::vector<double>& bike_caps,
                             const std::vector<double>& car_caps,
                             const SolverOptions& opts) {
  if (s.transfers.size() < 2)
    throw ValidationError("the design landscape requires two candidates");
  ShareGrid grid;
  grid.bike_caps = bike_caps;
  grid.car_caps = car_caps;
  size_t nb = bike_caps.size(), nc = car_caps.size();
  grid.share.assign(nb, std::vector<double>(nc, 0.0));
  grid.feasible.assign(nb, std::vector<char>(nc, 'N'));
  grid.fitness.assign(nb, std::vector<double>(nc, 0.0));
  parallel_for(static_cast<int>(nb * nc), [&](int cell) {
    size_t i = static_cast<size_t>(cell) / nc;
    size_t j = static_cast<size_t>(cell) % nc;
    Design d = empty_design(s);
    d.items[0] = {s.transfers[0].node, s.transfers[0].mode, 1, bike_caps[i]};
    d.items[1] = {s.transfers[1].node, s.transfers[1].mode, 1, car_caps[j]};
    grid.feasible[i][j] = construction_cost(d, s) <= s.budget ? 'Y' : 'N';
    try {
      ActiveNetwork net = apply_design(s, d);
      EquilibriumState st = solve_lower_level(net, opts);
      grid.share[i][j] = transit_share(net, st);
      grid.fitness[i][j] = generated_total(st);
    } catch (const SolverError&) {
      grid.share[i][j] = std::numeric_limits<double>::quiet_NaN();
      grid.fitness[i][j] = -std::numeric_limits<double>::infinity();
    }
  });
  return grid;
}

CalibrationResult calibrate(const Scenario& s, const CalibrationTargets& targets,
                            const std::vector<std::string>& free_params,
                            const SolverOptions& opts) {
  CalibrationResult res;
  res.params = s.behavior;
  if (!s.transfers.empty() &&
      s.transfers[0].transfer_time.kind == CostFn::Kind::Constant)
    res.transfer_time = s.transfers[0].transfer_time.t0;
  std::set<std::string> subs = transit_subnetworks(s);

  auto model = [&](double theta, double tau, double occ) {
    Scenario sc = s;
    sc.behavior = {theta, theta, theta};
    sc.policy = Policy::FixedTotal;  // mode choice must be active to calibrate
    for (auto& tc : sc.transfers) tc.transfer_time = CostFn{CostFn::Kind::Constant, tau};
    for (auto& l : sc.links)
      if (subs.count(l.subnetwork)) l.occupancy = occ;
    ActiveNetwork net = apply_design(sc, empty_design(sc));
    EquilibriumState st = solve_lower_level(net, opts);
    double err = 0.0;
    for (const auto& mm : mode_metrics(net, st)) {
      auto it = targets.mode_flows.find(mm.mode);
      if (it == targets.mode_flows.end()) continue;
      double d = (mm.flow - it->second) / std::max(1.0, it->second);
      err += d * d;
    }
    if (targets.ttt) {
      double d = (st.ttt - *targets.ttt) / std::max(1.0, *targets.ttt);
      err += d * d;
    }
    return err;
  };

  bool free_theta = false, free_tau = false, free_occ = false;
  for (const auto& f : free_params) {
    if (f == "theta") free_theta = true;
    if (f == "transfer_time") free_tau = true;
    if (f == "occupancy") free_occ = true;
  }

  double theta = s.behavior.theta, tau = res.transfer_time, occ = 1.0;
  auto golden = [&](double lo, double hi, const std::function<double(double)>& f) {
    const double phi = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 60; ++it) {
      if (f1 <= f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - phi * (b - a);
        f1 = f(x1);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + phi * (b - a);
        f2 = f(x2);
      }
    }
    return 0.5 * (a + b);
  };

  for (int round = 0; round < 3; ++round) {
    if (free_theta) {
      // Coarse grid, then refine around the best cell.
      double best = theta, bestv = model(theta, tau, occ);
      for (double t = 0.05; t <= 3.0; t += 0.05) {
        double v = model(t, tau, occ);
        if (v < bestv) {
          bestv = v;
          best = t;
        }
      }
      theta = golden(std::max(0.01, best - 0.05), best + 0.05,
                     [&](double t) { return model(t, tau, occ); });
    }
    if (free_tau)
      tau = golden(0.0, 60.0, [&](double t) { return model(theta, t, occ); });
    if (free_occ)
      occ = golden(1.0, 5.0, [&](double o) { return model(theta, tau, o); });
  }
  res.params = {theta, theta, theta};
  res.transfer_time = tau;
  res.occupancy = occ;
  res.residual = model(theta, tau, occ);
  // Flag parameters the targets cannot identify and plainly bad fits.
  res.poor = res.residual > 1e-3;
  if (free_tau && std::abs(model(theta, tau + 1.0, occ) - res.residual) < 1e-12)
    res.poor = true;
  return res;
}

}  // namespace transfernet
