#include "transfernet/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace transfernet {

double link_time(const CostFn& fn, double flow) { return fn.value(flow); }

double logsum(const std::vector<double>& costs, double scale) {
  double m = *std::min_element(costs.begin(), costs.end());
  double s = 0.0;
  for (double c : costs) s += std::exp(-scale * (c - m));
  return m - std::log(s) / scale;
}

std::vector<double> logit_split(const std::vector<double>& costs, double scale) {
  if (costs.empty()) throw ValidationError("logit_split: empty cost list");
  double m = *std::min_element(costs.begin(), costs.end());
  std::vector<double> p(costs.size());
  double s = 0.0;
  for (size_t i = 0; i < costs.size(); ++i) {
    p[i] = std::exp(-scale * (costs[i] - m));
    s += p[i];
  }
  for (double& x : p) x /= s;
  return p;
}

double path_cost(const ActiveNetwork& net, int path,
                 const std::vector<double>& link_flows,
                 const std::vector<double>& transfer_flows,
                 const std::vector<double>& mu) {
  const Scenario& s = *net.scenario;
  const ActivePath& p = net.paths[path];
  double c = 0.0;
  for (int li : p.links)
    c += s.links[li].cost.value(link_flows[li] / s.links[li].occupancy);
  for (int ti : p.transfers) {
    const TransferCandidate& tc = s.transfers[net.transfers[ti].candidate];
    c += tc.transfer_time.value(transfer_flows[ti]);
    if (!mu.empty()) c += mu[ti];
  }
  return c;
}

namespace {

// x*ln(x) with the flooring convention: the logarithm argument is clamped at
// eps, and 0*ln(0) evaluates to 0.
inline double xlog(double x, double eps) {
  if (x <= 0.0) return 0.0;
  return x * std::log(std::max(x, eps));
}

// Accurate difference x+h times log(x+h) minus x log x.
inline double xlog_delta(double x, double h, double eps) {
  if (h == 0.0) return 0.0;
  double xn = x + h;
  if (x > eps && xn > eps)
    return h * std::log(x) + xn * std::log1p(h / x);
  return xlog(xn, eps) - xlog(x, eps);
}

// 3-point Gauss-Legendre quadrature of t(x/occ) over [v, v+h]; exact for the
// polynomial curves used here up to degree 5.
inline double congestion_delta(const CostFn& fn, double occ, double v, double h) {
  if (h == 0.0) return 0.0;
  if (fn.kind == CostFn::Kind::Constant) return fn.t0 * h;
  static const double xg[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
  static const double wg[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  double mid = v + 0.5 * h, half = 0.5 * h;
  double acc = 0.0;
  for (int i = 0; i < 3; ++i)
    acc += wg[i] * fn.value(std::max(0.0, mid + half * xg[i]) / occ);
  return acc * half;
}

struct LowerLevel {
  const ActiveNetwork& net;
  const Scenario& s;
  BehaviorParams prm;
  double eps;

  int P, L, T, G, OD, R;
  Policy policy;
  std::vector<double> q0m_data;     // per group: existing per-mode demand
  std::vector<double> q0_od;        // per od
  std::vector<double> elastic_cap;  // per origin: o_max - o0
  std::vector<double> od_a, od_b;
  std::vector<int> od_origin;       // per od: origin index
  double ref_demand = 0.0;

  // Scratch filled by compute().
  std::vector<double> v, tl, vb, tb, cost;
  std::vector<double> q0m, qpm, qp, Qr;

  LowerLevel(const ActiveNetwork& n, const BehaviorParams& p, double eps_)
      : net(n), s(*n.scenario), prm(p), eps(eps_) {
    P = static_cast<int>(net.paths.size());
    L = static_cast<int>(s.links.size());
    T = static_cast<int>(net.transfers.size());
    G = static_cast<int>(net.od_modes.size());
    OD = static_cast<int>(s.od.size());
    R = static_cast<int>(s.origins.size());
    policy = s.policy;
    q0m_data.assign(G, 0.0);
    q0_od.assign(OD, 0.0);
    od_a.assign(OD, 0.0);
    od_b.assign(OD, 0.0);
    od_origin.assign(OD, -1);
    for (int g = 0; g < G; ++g) {
      const OdModeGroup& grp = net.od_modes[g];
      const OdDemand& od = s.od[grp.od];
      auto it = od.split.find(s.modes[grp.mode].id);
      if (it != od.split.end()) q0m_data[g] = it->second;
    }
    for (int i = 0; i < OD; ++i) {
      const OdDemand& od = s.od[i];
      q0_od[i] = od.q0;
      const DestinationSpec* d = s.destination(od.destination);
      od_a[i] = od.a ? *od.a : (d ? d->a : 0.0);
      od_b[i] = od.b ? *od.b : (d ? d->b : 0.0);
      for (int r = 0; r < R; ++r)
        if (s.origins[r].id == od.origin) od_origin[i] = r;
    }
    elastic_cap.assign(R, 0.0);
    for (int r = 0; r < R; ++r)
      elastic_cap[r] = std::max(0.0, s.origins[r].o_max - s.origins[r].o0);
    for (int i = 0; i < OD; ++i) ref_demand += q0_od[i];
    for (int r = 0; r < R; ++r) ref_demand += elastic_cap[r];
    v.assign(L, 0.0);
    tl.assign(L, 0.0);
    vb.assign(T, 0.0);
    tb.assign(T, 0.0);
    cost.assign(P, 0.0);
    q0m.assign(G, 0.0);
    qpm.assign(G, 0.0);
    qp.assign(OD, 0.0);
    Qr.assign(R, 0.0);
  }

  const TransferCandidate& candidate(int ti) const {
    return s.transfers[net.transfers[ti].candidate];
  }

  void aggregate(const std::vector<double>& f0, const std::vector<double>& fp) {
    std::fill(v.begin(), v.end(), 0.0);
    std::fill(vb.begin(), vb.end(), 0.0);
    for (int p = 0; p < P; ++p) {
      double f = f0[p] + fp[p];
      if (f == 0.0) continue;
      for (int li : net.paths[p].links) v[li] += f;
      for (int ti : net.paths[p].transfers) vb[ti] += f;
    }
    std::fill(q0m.begin(), q0m.end(), 0.0);
    std::fill(qpm.begin(), qpm.end(), 0.0);
    std::fill(qp.begin(), qp.end(), 0.0);
    std::fill(Qr.begin(), Qr.end(), 0.0);
    for (int g = 0; g < G; ++g) {
      for (int p : net.od_modes[g].paths) {
        q0m[g] += f0[p];
        qpm[g] += fp[p];
      }
      qp[net.od_modes[g].od] += qpm[g];
    }
    for (int i = 0; i < OD; ++i)
      if (od_origin[i] >= 0) Qr[od_origin[i]] += qp[i];
  }

  void times_and_costs(const std::vector<double>& mu) {
    for (int a = 0; a < L; ++a)
      tl[a] = s.links[a].cost.value(v[a] / s.links[a].occupancy);
    for (int t = 0; t < T; ++t) tb[t] = candidate(t).transfer_time.value(vb[t]);
    for (int p = 0; p < P; ++p) {
      double c = 0.0;
      for (int li : net.paths[p].links) c += tl[li];
      for (int ti : net.paths[p].transfers) c += tb[ti] + mu[ti];
      cost[p] = c;
    }
  }

  void compute(const std::vector<double>& f0, const std::vector<double>& fp,
               const std::vector<double>& mu) {
    aggregate(f0, fp);
    times_and_costs(mu);
  }

  struct Direction {
    std::vector<double> d0, dp;     // per path
    std::vector<double> dv, dvb;    // per link / transfer
    std::vector<double> dq0m, dqpm; // per group
    std::vector<double> dqp;        // per od
    std::vector<double> dQr;        // per origin
  };

  Direction make_direction(const std::vector<double>& f0,
                           const std::vector<double>& fp,
                           const AuxiliarySolution& aux) const {
    Direction d;
    d.d0.resize(P);
    d.dp.resize(P);
    d.dv.assign(L, 0.0);
    d.dvb.assign(T, 0.0);
    d.dq0m.assign(G, 0.0);
    d.dqpm.assign(G, 0.0);
    d.dqp.assign(OD, 0.0);
    d.dQr.assign(R, 0.0);
    for (int p = 0; p < P; ++p) {
      d.d0[p] = aux.f0[p] - f0[p];
      d.dp[p] = aux.fplus[p] - fp[p];
      double df = d.d0[p] + d.dp[p];
      if (df != 0.0) {
        for (int li : net.paths[p].links) d.dv[li] += df;
        for (int ti : net.paths[p].transfers) d.dvb[ti] += df;
      }
    }
    for (int g = 0; g < G; ++g) {
      for (int p : net.od_modes[g].paths) {
        d.dq0m[g] += d.d0[p];
        d.dqpm[g] += d.dp[p];
      }
      d.dqp[net.od_modes[g].od] += d.dqpm[g];
    }
    for (int i = 0; i < OD; ++i)
      if (od_origin[i] >= 0) d.dQr[od_origin[i]] += d.dqp[i];
    return d;
  }

  // Exact objective difference along the direction, built from per-term
  // differences so the line search stays meaningful near the optimum.
  double objective_delta(const std::vector<double>& f0,
                         const std::vector<double>& fp,
                         const std::vector<double>& mu, const Direction& d,
                         double lam) const {
    double dz = 0.0;
    for (int a = 0; a < L; ++a)
      if (d.dv[a] != 0.0)
        dz += congestion_delta(s.links[a].cost, s.links[a].occupancy, v[a],
                               lam * d.dv[a]);
    for (int t = 0; t < T; ++t)
      if (d.dvb[t] != 0.0) {
        dz += congestion_delta(candidate(t).transfer_time, 1.0, vb[t],
                               lam * d.dvb[t]);
        dz += mu[t] * lam * d.dvb[t];
      }
    const double th = 1.0 / prm.theta, ga = 1.0 / prm.gamma, et = 1.0 / prm.eta;
    for (int p = 0; p < P; ++p) {
      if (d.d0[p] != 0.0) dz += th * xlog_delta(f0[p], lam * d.d0[p], eps);
      if (d.dp[p] != 0.0) dz += th * xlog_delta(fp[p], lam * d.dp[p], eps);
    }
    for (int g = 0; g < G; ++g) {
      if (policy == Policy::FixedTotal && d.dq0m[g] != 0.0)
        dz += (ga - th) * xlog_delta(q0m[g], lam * d.dq0m[g], eps);
      // Fixed-mode existing totals are constant along feasible directions.
      if (d.dqpm[g] != 0.0)
        dz += (ga - th) * xlog_delta(qpm[g], lam * d.dqpm[g], eps);
    }
    for (int i = 0; i < OD; ++i) {
      if (d.dqp[i] != 0.0) {
        dz += (et - ga) * xlog_delta(qp[i], lam * d.dqp[i], eps);
        double h = lam * d.dqp[i];
        dz -= h * (od_a[i] - od_b[i] * qp[i] - 0.5 * od_b[i] * h);
      }
    }
    for (int r = 0; r < R; ++r)
      if (d.dQr[r] != 0.0) dz -= et * xlog_delta(Qr[r], lam * d.dQr[r], eps);
    return dz;
  }

  // Gradient of the inner objective dotted with the direction, at the current
  // aggregates.
  double gradient_dot(const std::vector<double>& f0,
                      const std::vector<double>& fp, const Direction& d) const {
    const double th = 1.0 / prm.theta, ga = 1.0 / prm.gamma, et = 1.0 / prm.eta;
    auto lg = [this](double x) { return std::log(std::max(x, eps)); };
    double acc = 0.0;
    for (int p = 0; p < P; ++p) {
      int g = group_of_path[p];
      int od = net.paths[p].od;
      if (d.d0[p] != 0.0) {
        double gr = cost[p] + th * (lg(f0[p]) - lg(q0m[g]));
        if (policy == Policy::FixedTotal)
          gr += ga * (lg(q0m[g]) - lg(q0_od[od]));
        acc += gr * d.d0[p];
      }
      if (d.dp[p] != 0.0) {
        int r = od_origin[od];
        double gr = cost[p] + th * (lg(fp[p]) - lg(qpm[g])) +
                    ga * (lg(qpm[g]) - lg(qp[od])) +
                    et * (lg(qp[od]) - lg(Qr[r])) -
                    (od_a[od] - od_b[od] * qp[od]);
        acc += gr * d.dp[p];
      }
    }
    return acc;
  }

  std::vector<int> group_of_path;
  void index_groups() {
    group_of_path.assign(P, -1);
    for (int g = 0; g < G; ++g)
      for (int p : net.od_modes[g].paths) group_of_path[p] = g;
  }

  // Logit-consistent auxiliary solution at the current costs.
  AuxiliarySolution auxiliary() const {
    AuxiliarySolution aux;
    aux.f0.assign(P, 0.0);
    aux.fplus.assign(P, 0.0);
    aux.q_plus.assign(OD, 0.0);
    aux.composite.assign(OD, 0.0);

    // Per-group route logsums and per-od composite costs.
    std::vector<double> Cm(G, 0.0);
    for (int g = 0; g < G; ++g) {
      std::vector<double> cg;
      cg.reserve(net.od_modes[g].paths.size());
      for (int p : net.od_modes[g].paths) cg.push_back(cost[p]);
      Cm[g] = logsum(cg, prm.theta);
    }
    for (int i = 0; i < OD; ++i) {
      const auto& groups = net.od_mode_groups[i];
      if (groups.empty()) continue;
      std::vector<double> cm;
      cm.reserve(groups.size());
      for (int g : groups) cm.push_back(Cm[g]);
      aux.composite[i] = logsum(cm, prm.gamma);
    }

    // Existing demand.
    if (policy == Policy::FixedMode) {
      for (int g = 0; g < G; ++g) {
        if (q0m_data[g] <= 0.0) continue;
        std::vector<double> cg;
        for (int p : net.od_modes[g].paths) cg.push_back(cost[p]);
        std::vector<double> pr = logit_split(cg, prm.theta);
        for (size_t k = 0; k < pr.size(); ++k)
          aux.f0[net.od_modes[g].paths[k]] = q0m_data[g] * pr[k];
      }
    } else {
      for (int i = 0; i < OD; ++i) {
        if (q0_od[i] <= 0.0) continue;
        const auto& groups = net.od_mode_groups[i];
        if (groups.empty())
          throw SolverError("no active path for OD pair '" + s.od[i].origin +
                            "'->'" + s.od[i].destination + "'");
        std::vector<double> cm;
        for (int g : groups) cm.push_back(Cm[g]);
        std::vector<double> pm = logit_split(cm, prm.gamma);
        for (size_t k = 0; k < groups.size(); ++k) {
          int g = groups[k];
          std::vector<double> cg;
          for (int p : net.od_modes[g].paths) cg.push_back(cost[p]);
          std::vector<double> pr = logit_split(cg, prm.theta);
          for (size_t j = 0; j < pr.size(); ++j)
            aux.f0[net.od_modes[g].paths[j]] = q0_od[i] * pm[k] * pr[j];
        }
      }
    }

    // Newly generated demand per origin.
    for (int r = 0; r < R; ++r) {
      double cap = elastic_cap[r];
      if (cap <= 0.0) continue;
      const auto& ods = net.origin_ods[r];
      std::vector<int> usable;
      for (int i : ods)
        if (!net.od_mode_groups[i].empty()) usable.push_back(i);
      if (usable.empty()) {
        if (!ods.empty())
          throw SolverError("no active path for elastic origin '" +
                            s.origins[r].id + "'");
        continue;
      }
      if (usable.size() == 1) {
        int i = usable[0];
        double a = od_a[i], b = od_b[i], C = aux.composite[i];
        double q = b > 0.0 ? (a - C) / b : (C < a ? cap : 0.0);
        aux.q_plus[i] = std::clamp(q, 0.0, cap);
      } else {
        demand_split(usable, aux.composite, cap, aux.q_plus);
      }
    }

    // Mode and route split of the generated demand.
    for (int i = 0; i < OD; ++i) {
      if (aux.q_plus[i] <= 0.0) continue;
      const auto& groups = net.od_mode_groups[i];
      std::vector<double> cm;
      for (int g : groups) cm.push_back(Cm[g]);
      std::vector<double> pm = logit_split(cm, prm.gamma);
      for (size_t k = 0; k < groups.size(); ++k) {
        int g = groups[k];
        std::vector<double> cg;
        for (int p : net.od_modes[g].paths) cg.push_back(cost[p]);
        std::vector<double> pr = logit_split(cg, prm.theta);
        for (size_t j = 0; j < pr.size(); ++j)
          aux.fplus[net.od_modes[g].paths[j]] = aux.q_plus[i] * pm[k] * pr[j];
      }
    }
    return aux;
  }

  // Multi-destination generation: per-destination stationarity
  // (1/eta)*ln(q_i/Q) + C_i = h_i(q_i), with Q = sum q_i clipped at cap.
  void demand_split(const std::vector<int>& ods,
                    const std::vector<double>& composite, double cap,
                    std::vector<double>& out) const {
    auto q_of = [&](int i, double w) {
      // Solve (1/eta)*ln(q) + C_i - h_i(q) = w for q in [0, cap].
      double C = composite[i], a = od_a[i], b = od_b[i];
      auto phi = [&](double q) {
        return std::log(std::max(q, 1e-300)) / prm.eta + C - (a - b * q);
      };
      if (phi(cap) <= w) return cap;
      double lo = 0.0, hi = cap;
      for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (phi(mid) <= w ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    };
    auto total = [&](double w) {
      double Q = 0.0;
      for (int i : ods) Q += q_of(i, w);
      return Q;
    };
    // Unconstrained stationarity: (1/eta)*ln(Q(w)) = w, decreasing residual.
    double wlo = -1e4, whi = 1e4;
    for (int it = 0; it < 200; ++it) {
      double w = 0.5 * (wlo + whi);
      double Q = total(w);
      double g = std::log(std::max(Q, 1e-300)) / prm.eta - w;
      (g > 0.0 ? wlo : whi) = w;
    }
    double wstar = 0.5 * (wlo + whi);
    if (total(wstar) > cap) {
      // Bound binds: find w with sum q_i(w) = cap (increasing in w).
      wlo = -1e4;
      whi = 1e4;
      for (int it = 0; it < 200; ++it) {
        double w = 0.5 * (wlo + whi);
        (total(w) <= cap ? wlo : whi) = w;
      }
      wstar = 0.5 * (wlo + whi);
    }
    for (int i : ods) out[i] = q_of(i, wstar);
  }
};

}  // namespace

AuxiliarySolution auxiliary_demand(const ActiveNetwork& net,
                                   const std::vector<double>& path_costs,
                                   const BehaviorParams& params) {
  LowerLevel ll(net, params, 1e-12);
  ll.index_groups();
  if (path_costs.size() != net.paths.size())
    throw ValidationError("auxiliary_demand: cost vector size mismatch");
  ll.cost = path_costs;
  return ll.auxiliary();
}

namespace detail {

double internal_objective(const ActiveNetwork& net, const BehaviorParams& params,
                          const std::vector<double>& f0,
                          const std::vector<double>& fplus,
                          const std::vector<double>& mu, double eps) {
  LowerLevel ll(net, params, eps);
  ll.index_groups();
  ll.aggregate(f0, fplus);
  const Scenario& s = *net.scenario;
  double Z = 0.0;
  for (int a = 0; a < ll.L; ++a) {
    const Link& l = s.links[a];
    Z += l.occupancy * l.cost.integral(ll.v[a] / l.occupancy);
  }
  for (int t = 0; t < ll.T; ++t)
    Z += ll.candidate(t).transfer_time.integral(ll.vb[t]) + mu[t] * ll.vb[t];
  const double th = 1.0 / params.theta, ga = 1.0 / params.gamma,
               et = 1.0 / params.eta;
  for (int p = 0; p < ll.P; ++p)
    Z += th * (xlog(f0[p], eps) + xlog(fplus[p], eps));
  for (int g = 0; g < ll.G; ++g) {
    Z += (ga - th) * xlog(ll.qpm[g], eps);
    if (ll.policy == Policy::FixedTotal)
      Z += (ga - th) * xlog(ll.q0m[g], eps);
    else
      Z += -th * xlog(ll.q0m[g], eps);
  }
  for (int i = 0; i < ll.OD; ++i) {
    Z += (et - ga) * xlog(ll.qp[i], eps);
    Z -= ll.od_a[i] * ll.qp[i] - 0.5 * ll.od_b[i] * ll.qp[i] * ll.qp[i];
    if (ll.policy == Policy::FixedTotal) Z += -ga * xlog(ll.q0_od[i], eps);
  }
  for (int r = 0; r < ll.R; ++r) Z -= et * xlog(ll.Qr[r], eps);
  return Z;
}

std::vector<double> internal_gradient(const ActiveNetwork& net,
                                      const BehaviorParams& params,
                                      const std::vector<double>& f0,
                                      const std::vector<double>& fplus,
                                      const std::vector<double>& mu,
                                      double eps) {
  LowerLevel ll(net, params, eps);
  ll.index_groups();
  ll.compute(f0, fplus, mu);
  const double th = 1.0 / params.theta, ga = 1.0 / params.gamma,
               et = 1.0 / params.eta;
  auto lg = [eps](double x) { return std::log(std::max(x, eps)); };
  std::vector<double> grad(2 * ll.P, 0.0);
  for (int p = 0; p < ll.P; ++p) {
    int g = ll.group_of_path[p];
    int od = net.paths[p].od;
    double g0 = ll.cost[p] + th * (lg(f0[p]) - lg(ll.q0m[g]));
    if (ll.policy == Policy::FixedTotal)
      g0 += ga * (lg(ll.q0m[g]) - lg(ll.q0_od[od]));
    grad[p] = g0;
    int r = ll.od_origin[od];
    grad[ll.P + p] = ll.cost[p] + th * (lg(fplus[p]) - lg(ll.qpm[g])) +
                     ga * (lg(ll.qpm[g]) - lg(ll.qp[od])) +
                     et * (lg(ll.qp[od]) - lg(ll.Qr[r])) -
                     (ll.od_a[od] - ll.od_b[od] * ll.qp[od]);
  }
  return grad;
}

}  // namespace detail

namespace {

struct InnerResult {
  double gap = 0.0;
  long iterations = 0;
  bool converged = false;
  bool stalled = false;
};

InnerResult run_inner(LowerLevel& ll, std::vector<double>& f0,
                      std::vector<double>& fp, const std::vector<double>& mu,
                      const SolverOptions& opts, std::vector<double>* trace) {
  InnerResult res;
  const double tol = opts.rel_gap * std::max(1.0, ll.ref_demand);
  double zrun = 0.0;
  bool have_z = false;
  for (long it = 0; it < opts.max_inner; ++it) {
    ll.compute(f0, fp, mu);
    AuxiliarySolution aux = ll.auxiliary();
    double D = 0.0;
    for (int p = 0; p < ll.P; ++p) {
      D = std::max(D, std::abs(aux.f0[p] - f0[p]));
      D = std::max(D, std::abs(aux.fplus[p] - fp[p]));
    }
    for (int i = 0; i < ll.OD; ++i)
      D = std::max(D, std::abs(aux.q_plus[i] - ll.qp[i]));
    res.gap = D / std::max(1.0, ll.ref_demand);
    res.iterations = it;
    if (D <= tol) {
      res.converged = true;
      return res;
    }
    LowerLevel::Direction dir = ll.make_direction(f0, fp, aux);
    double g0 = ll.gradient_dot(f0, fp, dir);
    // At the zero-flow boundary the floored entropy gradient understates the
    // (unbounded) pull toward the interior, so a nonnegative g0 there is an
    // artifact and plain decrease is required instead.
    bool boundary = false;
    for (int p = 0; p < ll.P && !boundary; ++p)
      boundary = (f0[p] <= 0.0 && dir.d0[p] > 0.0) ||
                 (fp[p] <= 0.0 && dir.dp[p] > 0.0);
    if (g0 >= 0.0 && !boundary) {
      res.converged = D <= 100.0 * tol;
      res.stalled = !res.converged;
      return res;
    }
    double lam;
    double dz = 0.0;
    if (opts.step == SolverOptions::Step::Msa) {
      lam = 1.0 / static_cast<double>(it + 1);
      if (trace) dz = ll.objective_delta(f0, fp, mu, dir, lam);
    } else {
      // Exact line search: bisection on the directional derivative. The
      // direction is aux - x with both endpoints feasible, so every
      // lam in [0,1] stays feasible; convexity makes the derivative
      // nondecreasing. Unlike objective differences, the derivative does not
      // cancel near the optimum, which preserves terminal accuracy.
      std::vector<double> tf0(ll.P), tfp(ll.P);
      auto phi_prime = [&](double l) {
        for (int p = 0; p < ll.P; ++p) {
          tf0[p] = f0[p] + l * dir.d0[p];
          tfp[p] = fp[p] + l * dir.dp[p];
        }
        ll.compute(tf0, tfp, mu);
        return ll.gradient_dot(tf0, tfp, dir);
      };
      if (phi_prime(1.0) <= 0.0) {
        lam = 1.0;
      } else {
        double lo = 0.0, hi = 1.0;
        for (int b = 0; b < 100 && hi - lo > 1e-16; ++b) {
          double mid = 0.5 * (lo + hi);
          (phi_prime(mid) < 0.0 ? lo : hi) = mid;
        }
        lam = 0.5 * (lo + hi);
      }
      ll.compute(f0, fp, mu);
      if (lam <= 1e-14) {
        res.converged = D <= 100.0 * tol;
        res.stalled = !res.converged;
        return res;
      }
      if (trace) dz = ll.objective_delta(f0, fp, mu, dir, lam);
    }
    for (int p = 0; p < ll.P; ++p) {
      f0[p] = std::max(0.0, f0[p] + lam * dir.d0[p]);
      fp[p] = std::max(0.0, fp[p] + lam * dir.dp[p]);
    }
    if (trace) {
      zrun += dz;
      trace->push_back(zrun);
    }
  }
  res.converged = false;
  return res;
}

}  // namespace

EquilibriumState solve_lower_level(const ActiveNetwork& net,
                                   const SolverOptions& opts) {
  return solve_lower_level(net, net.scenario->behavior, opts);
}

EquilibriumState solve_lower_level(const ActiveNetwork& net,
                                   const BehaviorParams& params,
                                   const SolverOptions& opts) {
  LowerLevel ll(net, params, opts.entropy_eps);
  ll.index_groups();
  const Scenario& s = *net.scenario;

  // Feasibility prechecks: every positive-demand OD needs an active path, and
  // under the fixed-mode policy every split mode needs an active path.
  for (int i = 0; i < ll.OD; ++i) {
    bool needs = s.od[i].q0 > 0.0;
    if (ll.od_origin[i] >= 0 && ll.elastic_cap[ll.od_origin[i]] > 0.0) needs = true;
    if (needs && net.od_mode_groups[i].empty())
      throw SolverError("no active path for OD pair '" + s.od[i].origin +
                        "'->'" + s.od[i].destination + "'");
  }
  if (ll.policy == Policy::FixedMode) {
    for (int i = 0; i < ll.OD; ++i) {
      for (const auto& [mode, q] : s.od[i].split) {
        if (q <= 0.0) continue;
        bool found = false;
        for (int g : net.od_mode_groups[i])
          if (s.modes[net.od_modes[g].mode].id == mode) found = true;
        if (!found)
          throw SolverError("existing demand of mode '" + mode +
                            "' on OD pair '" + s.od[i].origin + "'->'" +
                            s.od[i].destination + "' has no active path");
      }
    }
    // A hard capacity below the fixed existing flow that must cross it can
    // never be satisfied.
    for (int t = 0; t < ll.T; ++t) {
      double forced = 0.0;
      for (int g = 0; g < ll.G; ++g) {
        if (ll.q0m_data[g] <= 0.0) continue;
        bool all_cross = true;
        for (int p : net.od_modes[g].paths) {
          const auto& trs = net.paths[p].transfers;
          if (std::find(trs.begin(), trs.end(), t) == trs.end()) all_cross = false;
        }
        if (all_cross) forced += ll.q0m_data[g];
      }
      if (forced > net.transfers[t].capacity)
        throw SolverError("infeasible capacity at node '" + ll.candidate(t).node +
                          "': existing demand " + std::to_string(forced) +
                          " exceeds capacity " +
                          std::to_string(net.transfers[t].capacity));
    }
  }

  // Initial loading.
  std::vector<double> f0(ll.P, 0.0), fp(ll.P, 0.0);
  if (ll.policy == Policy::FixedMode) {
    for (int g = 0; g < ll.G; ++g) {
      double n = static_cast<double>(net.od_modes[g].paths.size());
      for (int p : net.od_modes[g].paths) f0[p] = ll.q0m_data[g] / n;
    }
  } else {
    for (int i = 0; i < ll.OD; ++i) {
      double npaths = 0.0;
      for (int g : net.od_mode_groups[i])
        npaths += static_cast<double>(net.od_modes[g].paths.size());
      if (npaths == 0.0) continue;
      for (int g : net.od_mode_groups[i])
        for (int p : net.od_modes[g].paths) f0[p] = ll.q0_od[i] / npaths;
    }
  }

  std::vector<double> mu(ll.T, 0.0);
  EquilibriumState st;
  long total_iters = 0;
  int outer = 0;
  bool all_converged = true;
  std::string message;

  auto inner = [&](void) {
    std::vector<double>* tr = nullptr;
    if (opts.record_trace) {
      st.trace.emplace_back();
      tr = &st.trace.back();
    }
    InnerResult r = run_inner(ll, f0, fp, mu, opts, tr);
    total_iters += r.iterations;
    st.gap = r.gap;
    if (!r.converged) {
      all_converged = false;
      message = r.stalled ? "line search stalled before tolerance"
                          : "inner iteration budget exhausted";
    }
    return r;
  };

  inner();
  if (ll.T > 0) {
    const double feas_tol = 1e-7;
    auto violation = [&](int t) {
      return ll.vb[t] - net.transfers[t].capacity;
    };
    auto max_violation = [&]() {
      double m = 0.0;
      for (int t = 0; t < ll.T; ++t)
        m = std::max(m, violation(t) / std::max(1.0, net.transfers[t].capacity));
      return m;
    };
    if (max_violation() > feas_tol) {
      if (ll.T == 1) {
        // Single constraint: bracket and bisect the multiplier.
        int t = 0;
        double cap = net.transfers[t].capacity;
        double lo = 0.0, hi = 1.0;
        while (true) {
          mu[t] = hi;
          inner();
          ++outer;
          if (ll.vb[t] <= cap) break;
          lo = hi;
          hi *= opts.penalty_growth;
          if (hi > 1e8)
            throw SolverError("infeasible capacity at node '" +
                              ll.candidate(t).node +
                              "': demand cannot be reduced below capacity");
        }
        for (int it = 0; it < 100; ++it) {
          double mid = 0.5 * (lo + hi);
          mu[t] = mid;
          inner();
          ++outer;
          (ll.vb[t] > cap ? lo : hi) = mid;
          if (hi - lo <= 1e-12 * (1.0 + hi)) break;
        }
        mu[t] = hi;
        inner();
        ++outer;
      } else {
        // Several constraints: damped subgradient ascent on the multipliers.
        std::vector<double> rho(ll.T, opts.rho);
        std::vector<double> prev(ll.T, 0.0);
        bool first = true;
        for (int o = 0; o < opts.max_outer; ++o) {
          bool done = true;
          for (int t = 0; t < ll.T; ++t) {
            double cap = std::max(1.0, net.transfers[t].capacity);
            double viol = violation(t);
            if (viol > feas_tol * cap) done = false;
            if (mu[t] > 1e-10 && std::abs(viol) > 1e-6 * cap) done = false;
          }
          if (done) break;
          for (int t = 0; t < ll.T; ++t) {
            double viol = violation(t);
            if (!first) {
              if (viol * prev[t] < 0.0)
                rho[t] = std::max(1e-5, rho[t] * 0.5);
              else if (std::abs(viol) > 0.9 * std::abs(prev[t]))
                rho[t] = std::min(1.0, rho[t] * 1.3);
            }
            prev[t] = viol;
            mu[t] = std::max(0.0, mu[t] + rho[t] * viol);
          }
          first = false;
          inner();
          ++outer;
          if (o + 1 == opts.max_outer) {
            all_converged = false;
            message = "capacity multiplier loop exhausted";
          }
        }
      }
    }
  }

  // Assemble the state.
  ll.compute(f0, fp, mu);
  st.f0 = f0;
  st.fplus = fp;
  st.q0_mode = ll.q0m;
  st.qplus_mode = ll.qpm;
  st.q_plus = ll.qp;
  st.link_flow = ll.v;
  st.link_time = ll.tl;
  st.transfer_flow = ll.vb;
  st.transfer_time = ll.tb;
  st.mu = mu;
  st.iterations = total_iters;
  st.outer_iterations = outer;
  st.converged = all_converged;
  st.message = message;
  ObjectiveBreakdown ob = objective_value(st, net, params);
  st.Z = ob.Z;
  st.z1 = ob.z1;
  st.z2 = ob.z2;
  st.z3 = ob.z3;
  st.z4 = ob.z4;
  st.z5 = ob.z5;
  st.ttt = total_travel_time(st, net);
  return st;
}

ObjectiveBreakdown objective_value(const EquilibriumState& st,
                                   const ActiveNetwork& net,
                                   const BehaviorParams& params) {
  LowerLevel ll(net, params, 1e-12);
  ll.index_groups();
  ll.aggregate(st.f0, st.fplus);
  const Scenario& s = *net.scenario;
  ObjectiveBreakdown ob{};
  const double eps = 1e-12;
  // z1: full route entropy plus link congestion integrals.
  for (int p = 0; p < ll.P; ++p) {
    double f = st.f0[p] + st.fplus[p];
    if (f > 0.0) ob.z1 += (xlog(f, eps) - f) / params.theta;
  }
  for (int a = 0; a < ll.L; ++a) {
    const Link& l = s.links[a];
    ob.z1 += l.occupancy * l.cost.integral(ll.v[a] / l.occupancy);
  }
  // z2: transfer congestion integrals.
  for (int t = 0; t < ll.T; ++t)
    ob.z2 += ll.candidate(t).transfer_time.integral(ll.vb[t]);
  // z3: mode-choice entropy of the mode-choosing demand segment.
  for (int i = 0; i < ll.OD; ++i) {
    double q = ll.policy == Policy::FixedTotal ? ll.q0_od[i] : ll.qp[i];
    if (q <= 0.0) continue;
    for (int g : net.od_mode_groups[i]) {
      double qm = ll.policy == Policy::FixedTotal ? ll.q0m[g] : ll.qpm[g];
      ob.z3 += (qm * (std::log(std::max(qm, eps)) -
                      std::log(std::max(q, eps))) -
                qm + q) /
               params.gamma;
    }
  }
  // z4: destination-choice entropy of the generated demand.
  for (int i = 0; i < ll.OD; ++i) {
    if (ll.qp[i] <= 0.0 || ll.od_origin[i] < 0) continue;
    double Q = ll.Qr[ll.od_origin[i]];
    ob.z4 += ll.qp[i] *
             (std::log(std::max(ll.qp[i], eps)) - std::log(std::max(Q, eps))) /
             params.eta;
  }
  // z5: inverse-demand integral.
  for (int i = 0; i < ll.OD; ++i)
    ob.z5 -= ll.od_a[i] * ll.qp[i] - 0.5 * ll.od_b[i] * ll.qp[i] * ll.qp[i];
  ob.Z = ob.z1 + ob.z2 + ob.z3 + ob.z4 + ob.z5;
  return ob;
}

double total_travel_time(const EquilibriumState& st, const ActiveNetwork& net) {
  const Scenario& s = *net.scenario;
  double ttt = 0.0;
  for (size_t a = 0; a < s.links.size(); ++a)
    ttt += st.link_flow[a] *
           s.links[a].cost.value(st.link_flow[a] / s.links[a].occupancy);
  for (size_t t = 0; t < net.transfers.size(); ++t)
    ttt += st.transfer_flow[t] *
           s.transfers[net.transfers[t].candidate].transfer_time.value(
               st.transfer_flow[t]);
  return ttt;
}

KktReport kkt_check(const EquilibriumState& st, const ActiveNetwork& net,
                    const BehaviorParams& params, double tol) {
  LowerLevel ll(net, params, 1e-12);
  ll.index_groups();
  ll.compute(st.f0, st.fplus, st.mu);
  const Scenario& s = *net.scenario;
  KktReport rep;

  std::vector<double> Cm(ll.G, 0.0);
  for (int g = 0; g < ll.G; ++g) {
    std::vector<double> cg;
    for (int p : net.od_modes[g].paths) cg.push_back(ll.cost[p]);
    Cm[g] = logsum(cg, params.theta);
  }

  // Route-choice residuals.
  for (int g = 0; g < ll.G; ++g) {
    std::vector<double> cg;
    for (int p : net.od_modes[g].paths) cg.push_back(ll.cost[p]);
    std::vector<double> pr = logit_split(cg, params.theta);
    if (ll.q0m[g] > 1e-12) {
      for (size_t k = 0; k < pr.size(); ++k)
        rep.route_residual =
            std::max(rep.route_residual,
                     std::abs(st.f0[net.od_modes[g].paths[k]] / ll.q0m[g] - pr[k]));
    }
    if (ll.qpm[g] > 1e-12) {
      for (size_t k = 0; k < pr.size(); ++k)
        rep.route_residual = std::max(
            rep.route_residual,
            std::abs(st.fplus[net.od_modes[g].paths[k]] / ll.qpm[g] - pr[k]));
    }
  }

  // Mode-choice residuals.
  for (int i = 0; i < ll.OD; ++i) {
    const auto& groups = net.od_mode_groups[i];
    if (groups.empty()) continue;
    std::vector<double> cm;
    for (int g : groups) cm.push_back(Cm[g]);
    std::vector<double> pm = logit_split(cm, params.gamma);
    if (ll.policy == Policy::FixedTotal && ll.q0_od[i] > 1e-12) {
      for (size_t k = 0; k < groups.size(); ++k)
        rep.mode_residual =
            std::max(rep.mode_residual,
                     std::abs(ll.q0m[groups[k]] / ll.q0_od[i] - pm[k]));
    }
    if (ll.qp[i] > 1e-12) {
      for (size_t k = 0; k < groups.size(); ++k)
        rep.mode_residual =
            std::max(rep.mode_residual,
                     std::abs(ll.qpm[groups[k]] / ll.qp[i] - pm[k]));
    }
  }

  // Demand-generation residuals against the stationarity targets.
  AuxiliarySolution aux = ll.auxiliary();
  for (int i = 0; i < ll.OD; ++i) {
    if (ll.od_origin[i] < 0 || ll.elastic_cap[ll.od_origin[i]] <= 0.0) continue;
    rep.destination_residual =
        std::max(rep.destination_residual,
                 std::abs(ll.qp[i] - aux.q_plus[i]) /
                     (1.0 + std::abs(aux.q_plus[i])));
  }

  // Conservation.
  for (int g = 0; g < ll.G; ++g) {
    if (ll.policy == Policy::FixedMode) {
      double ref = std::max(1.0, ll.q0m_data[g]);
      rep.conservation_residual =
          std::max(rep.conservation_residual,
                   std::abs(ll.q0m[g] - ll.q0m_data[g]) / ref);
    }
  }
  for (int i = 0; i < ll.OD; ++i) {
    double tot0 = 0.0;
    for (int g : net.od_mode_groups[i]) tot0 += ll.q0m[g];
    rep.conservation_residual =
        std::max(rep.conservation_residual,
                 std::abs(tot0 - ll.q0_od[i]) / std::max(1.0, ll.q0_od[i]));
  }
  for (int p = 0; p < ll.P; ++p)
    if (st.f0[p] < 0.0 || st.fplus[p] < 0.0)
      rep.conservation_residual = std::max(
          rep.conservation_residual, std::max(-st.f0[p], -st.fplus[p]));

  // Hard capacities.
  for (int t = 0; t < ll.T; ++t)
    rep.capacity_violation =
        std::max(rep.capacity_violation,
                 (ll.vb[t] - net.transfers[t].capacity) /
                     std::max(1.0, net.transfers[t].capacity));

  rep.pass = rep.route_residual < tol && rep.mode_residual < tol &&
             rep.destination_residual < tol &&
             rep.conservation_residual < 1e-9 && rep.capacity_violation < 1e-6;
  return rep;
}

}  // namespace transfernet
