#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"
#include "transfernet/equilibrium.hpp"
#include "transfernet/scenario.hpp"

using namespace transfernet;
using nlohmann::json;

namespace {

std::string data_path(const std::string& name) {
  return std::string(TRANSFERNET_DATA_DIR) + "/" + name;
}

SolverOptions tight() {
  SolverOptions o;
  o.rel_gap = 1e-10;
  return o;
}

double total(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0);
}

Design cap_design(const Scenario& s, double cap) {
  Design d = empty_design(s);
  d.items[0].xi = 1;
  d.items[0].capacity = cap;
  return d;
}

}  // namespace

TEST_CASE("logit split and logsum") {
  auto p = logit_split({46.19, 54.0}, 0.9);
  CHECK(p[0] == doctest::Approx(0.99912).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.00088).epsilon(2e-2));
  CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));

  // Overflow safety with extreme cost spreads.
  auto q = logit_split({1.0, 1e6}, 2.0);
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(q[1]));

  // The logsum sits below the minimum cost and approaches it as the scale
  // grows.
  double ls = logsum({46.19, 54.0}, 0.9);
  CHECK(ls < 46.19);
  CHECK(logsum({46.19, 54.0}, 50.0) == doctest::Approx(46.19).epsilon(1e-6));
  CHECK(logsum({10.0}, 0.5) == doctest::Approx(10.0));
}

TEST_CASE("link time evaluation") {
  CostFn poly{CostFn::Kind::Poly, 4, 1, 500, 2};
  CHECK(link_time(poly, 755) == doctest::Approx(6.2801).epsilon(1e-9));
}

TEST_CASE("fixed-total equilibrium with open transfer reproduces the frozen "
          "solution") {
  Scenario s = load_scenario_file(data_path("fig2.json"));
  ActiveNetwork net = apply_design(s, full_design(s));
  EquilibriumState st = solve_lower_level(net, tight());
  REQUIRE(st.converged);
  // Path order: car, metro, P+R.
  CHECK(st.f0[0] == doctest::Approx(0.554259).epsilon(1e-3));
  CHECK(st.f0[1] == doctest::Approx(171.6356).epsilon(1e-4));
  CHECK(st.f0[2] == doctest::Approx(1827.8102).epsilon(1e-4));
  CHECK(st.ttt == doctest::Approx(103197.22).epsilon(1e-5));
  CHECK(total(st.f0) == doctest::Approx(2000.0).epsilon(1e-10));
  CHECK(total(st.q_plus) == doctest::Approx(0.0));
  // Transfer time is experienced but the dual is zero below capacity.
  CHECK(st.transfer_flow[0] == doctest::Approx(1827.8102).epsilon(1e-4));
  CHECK(st.mu[0] == 0.0);
}

TEST_CASE("do-nothing network loads the observed split exactly") {
  Scenario s = load_scenario_file(data_path("fig2.json"));
  s.policy = Policy::FixedMode;
  ActiveNetwork net = apply_design(s, empty_design(s));
  EquilibriumState st = solve_lower_level(net, tight());
  REQUIRE(st.converged);
  CHECK(st.f0[0] == doctest::Approx(755.0).epsilon(1e-10));
  CHECK(st.f0[1] == doctest::Approx(1245.0).epsilon(1e-10));
  // Hand-computed: 755*(6.2801+43.324977) + 1245*(25+27.49).
  CHECK(st.ttt == doctest::Approx(102801.8465).epsilon(1e-7));
}

TEST_CASE("auxiliary demand is the closed-form logit loading") {
  Scenario s = load_scenario_file(data_path("fig2.json"));
  ActiveNetwork net = apply_design(s, full_design(s));
  std::vector<double> costs = {47.0, 50.0, 34.0};
  AuxiliarySolution aux = auxiliary_demand(net, costs, s.behavior);
  // gamma = theta collapses the nested split to a flat logit over paths.
  auto p = logit_split(costs, s.behavior.theta);
  for (int i = 0; i < 3; ++i)
    CHECK(aux.f0[i] == doctest::Approx(2000.0 * p[i]).epsilon(1e-9));
  CHECK(aux.composite[0] == doctest::Approx(logsum(costs, 0.9)).epsilon(1e-9));
  CHECK(total(aux.q_plus) == 0.0);
}

TEST_CASE("reported objective terms on a one-path scenario") {
  // Single constant-time path, unit demand, theta = 1: the route entropy
  // contributes -1 and the congestion integral 5, so z1 = 4.
  const char* doc = R"({
    "name": "one-path",
    "nodes": ["O", "D"],
    "links": [{"id": "L", "from": "O", "to": "D", "subnetwork": "car",
               "cost": {"kind": "constant", "t0": 5}}],
    "modes": [{"id": "car", "kind": "single", "legs": ["car"]}],
    "paths": [{"id": "p", "origin": "O", "destination": "D", "mode": "car",
               "nodes": ["O", "D"], "links": ["L"]}],
    "demand": {
      "od": [{"origin": "O", "destination": "D", "q0": 1,
              "split": {"car": 1}}],
      "origins": [{"id": "O", "o0": 1, "o_max": 1}],
      "destinations": [{"id": "D", "d0": 1, "d_max": 1}]
    },
    "behavior": {"theta": 1.0}
  })";
  Scenario s = load_scenario(doc);
  ActiveNetwork net = apply_design(s, empty_design(s));
  EquilibriumState st = solve_lower_level(net, tight());
  CHECK(st.z1 == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(st.z2 == 0.0);
  CHECK(st.z3 == 0.0);
  CHECK(st.z4 == 0.0);
  CHECK(st.z5 == 0.0);
  CHECK(st.Z == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(st.ttt == doctest::Approx(5.0));
}

TEST_CASE("elastic generation series against the frozen values") {
  Scenario s = load_scenario_file(data_path("fig2_elastic.json"));
  // Total demand (existing 100 plus generated) over capacities 100..500.
  const double expect[] = {108.38, 272.60, 429.21, 577.50, 677.20};
  for (int i = 0; i < 5; ++i) {
    ActiveNetwork net = apply_design(s, cap_design(s, 100.0 * (i + 1)));
    EquilibriumState st = solve_lower_level(net, tight());
    REQUIRE(st.converged);
    CHECK(100.0 + total(st.q_plus) ==
          doctest::Approx(expect[i]).epsilon(2e-3));
    if (i < 4) {  // capacity binds below the unconstrained volume
      CHECK(st.mu[0] > 0.0);
      CHECK(st.transfer_flow[0] ==
            doctest::Approx(100.0 * (i + 1)).epsilon(1e-6));
    }
  }
  // Beyond the plateau the dual vanishes.
  ActiveNetwork net = apply_design(s, cap_design(s, 2000.0));
  EquilibriumState st = solve_lower_level(net, tight());
  CHECK(st.mu[0] == 0.0);
  CHECK(100.0 + total(st.q_plus) == doctest::Approx(677.20).epsilon(2e-3));
}

TEST_CASE("capacity below the committed existing flow is infeasible") {
  Scenario s = load_scenario_file(data_path("fig2_elastic.json"));
  ActiveNetwork net = apply_design(s, cap_design(s, 90.0));
  CHECK_THROWS_AS(solve_lower_level(net, tight()), SolverError);
}

TEST_CASE("closing the only path of a committed mode is infeasible") {
  Scenario s = load_scenario_file(data_path("fig2_elastic.json"));
  ActiveNetwork net = apply_design(s, empty_design(s));
  CHECK_THROWS_AS(solve_lower_level(net, tight()), SolverError);
}

TEST_CASE("inner objective gradient matches finite differences") {
  Scenario s = load_scenario_file(data_path("fig2_elastic.json"));
  ActiveNetwork net = apply_design(s, cap_design(s, 300.0));
  BehaviorParams prm = s.behavior;
  // An interior point: all flows strictly positive.
  std::vector<double> f0 = {5.0, 2.0, 93.0};
  std::vector<double> fp = {40.0, 60.0, 150.0};
  std::vector<double> mu = {0.7};
  std::vector<double> g = detail::internal_gradient(net, prm, f0, fp, mu, 1e-12);
  const double h = 1e-6;
  for (int p = 0; p < 3; ++p) {
    auto bump = [&](std::vector<double> v, int i, double d) {
      v[i] += d;
      return v;
    };
    double fd0 = (detail::internal_objective(net, prm, bump(f0, p, h), fp, mu, 1e-12) -
                  detail::internal_objective(net, prm, bump(f0, p, -h), fp, mu, 1e-12)) /
                 (2 * h);
    double fdp = (detail::internal_objective(net, prm, f0, bump(fp, p, h), mu, 1e-12) -
                  detail::internal_objective(net, prm, f0, bump(fp, p, -h), mu, 1e-12)) /
                 (2 * h);
    CHECK(g[p] == doctest::Approx(fd0).epsilon(1e-4));
    CHECK(g[3 + p] == doctest::Approx(fdp).epsilon(1e-4));
  }
}

TEST_CASE("inner objective is midpoint convex") {
  Scenario s = load_scenario_file(data_path("fig2_elastic.json"));
  ActiveNetwork net = apply_design(s, cap_design(s, 300.0));
  BehaviorParams prm = s.behavior;
  std::vector<double> mu = {0.3};
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> U(0.1, 400.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xa(3), xb(3), ya(3), yb(3), ma(3), mb(3);
    for (int i = 0; i < 3; ++i) {
      xa[i] = U(rng);
      xb[i] = U(rng);
      ya[i] = U(rng);
      yb[i] = U(rng);
      ma[i] = 0.5 * (xa[i] + ya[i]);
      mb[i] = 0.5 * (xb[i] + yb[i]);
    }
    double zx = detail::internal_objective(net, prm, xa, xb, mu, 1e-12);
    double zy = detail::internal_objective(net, prm, ya, yb, mu, 1e-12);
    double zm = detail::internal_objective(net, prm, ma, mb, mu, 1e-12);
    CHECK(zm <= 0.5 * (zx + zy) + 1e-7 * (1.0 + std::abs(zx) + std::abs(zy)));
  }
}

TEST_CASE("two-route solver matches an independent bisection oracle") {
  // Fixed demand split between two congested routes by a flat logit; the
  // fixed point f1 = q * p1(c(f1)) is bracketed and bisected independently.
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> Utheta(0.05, 1.5);
  std::uniform_real_distribution<double> Uq(200.0, 3000.0);
  std::uniform_real_distribution<double> Ut0(5.0, 40.0);
  for (int draw = 0; draw < 20; ++draw) {
    double theta = Utheta(rng);
    double q = Uq(rng);
    double t0a = Ut0(rng), t0b = Ut0(rng);
    json j = {
        {"name", "two-route"},
        {"nodes", {"O", "D"}},
        {"links",
         {{{"id", "La"}, {"from", "O"}, {"to", "D"}, {"subnetwork", "car"},
           {"cost", {{"kind", "poly"}, {"t0", t0a}, {"alpha", 1}, {"kappa", 500},
                     {"beta", 2}}}},
          {{"id", "Lb"}, {"from", "O"}, {"to", "D"}, {"subnetwork", "car"},
           {"cost", {{"kind", "poly"}, {"t0", t0b}, {"alpha", 1}, {"kappa", 800},
                     {"beta", 2}}}}}},
        {"modes", {{{"id", "car"}, {"kind", "single"}, {"legs", {"car"}}}}},
        {"paths",
         {{{"id", "a"}, {"origin", "O"}, {"destination", "D"}, {"mode", "car"},
           {"nodes", {"O", "D"}}, {"links", {"La"}}},
          {{"id", "b"}, {"origin", "O"}, {"destination", "D"}, {"mode", "car"},
           {"nodes", {"O", "D"}}, {"links", {"Lb"}}}}},
        {"demand",
         {{"od", {{{"origin", "O"}, {"destination", "D"}, {"q0", q},
                   {"split", {{"car", q}}}}}},
          {"origins", {{{"id", "O"}, {"o0", q}, {"o_max", q}}}},
          {"destinations", {{{"id", "D"}, {"d0", q}, {"d_max", q}}}}}},
        {"behavior", {{"theta", theta}}}};
    Scenario s = load_scenario(j.dump());
    ActiveNetwork net = apply_design(s, empty_design(s));
    EquilibriumState st = solve_lower_level(net, tight());
    REQUIRE(st.converged);

    auto residual = [&](double f1) {
      double ca = t0a + std::pow(f1 / 500.0, 2);
      double cb = t0b + std::pow((q - f1) / 800.0, 2);
      double p1 = 1.0 / (1.0 + std::exp(-theta * (cb - ca)));
      return q * p1 - f1;  // decreasing in f1
    };
    double lo = 0.0, hi = q;
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (lo + hi);
      (residual(mid) > 0.0 ? lo : hi) = mid;
    }
    double oracle = 0.5 * (lo + hi);
    CHECK(std::abs(st.f0[0] - oracle) < 1e-6);
    CHECK(std::abs(st.f0[0] + st.f0[1] - q) < 1e-9 * q);
  }
}

TEST_CASE("KKT verifier passes on converged solves") {
  SUBCASE("fixed-total with open transfer") {
    Scenario s = load_scenario_file(data_path("fig2.json"));
    ActiveNetwork net = apply_design(s, full_design(s));
    EquilibriumState st = solve_lower_level(net, tight());
    KktReport rep = kkt_check(st, net, s.behavior, 1e-6);
    CHECK(rep.route_residual < 1e-6);
    CHECK(rep.mode_residual < 1e-6);
    CHECK(rep.destination_residual < 1e-6);
    CHECK(rep.conservation_residual < 1e-9);
    CHECK(rep.capacity_violation < 1e-6);
    CHECK(rep.pass);
  }
  SUBCASE("capacitated elastic scenario") {
    Scenario s = load_scenario_file(data_path("fig2_elastic.json"));
    ActiveNetwork net = apply_design(s, cap_design(s, 300.0));
    EquilibriumState st = solve_lower_level(net, tight());
    KktReport rep = kkt_check(st, net, s.behavior, 1e-6);
    CHECK(rep.pass);
  }
  SUBCASE("two origins, two binding capacities") {
    Scenario s = load_scenario_file(data_path("fig5.json"));
    Design d = full_design(s);
    d.items[0].capacity = 600.0;
    d.items[1].capacity = 450.0;
    ActiveNetwork net = apply_design(s, d);
    EquilibriumState st = solve_lower_level(net, tight());
    REQUIRE(st.converged);
    KktReport rep = kkt_check(st, net, s.behavior, 1e-6);
    CHECK(rep.pass);
  }
}

TEST_CASE("binding capacity satisfies complementary slackness") {
  Scenario s = load_scenario_file(data_path("fig2_elastic.json"));
  ActiveNetwork net = apply_design(s, cap_design(s, 200.0));
  EquilibriumState st = solve_lower_level(net, tight());
  REQUIRE(st.converged);
  CHECK(st.transfer_flow[0] <= 200.0 * (1.0 + 1e-6));
  CHECK(st.mu[0] > 0.0);
  CHECK(std::abs(st.transfer_flow[0] - 200.0) <= 1e-6 * 200.0);
}

TEST_CASE("line search descends the inner objective within each phase") {
  for (const char* name : {"fig2.json", "fig2_elastic.json", "fig5.json"}) {
    Scenario s = load_scenario_file(data_path(name));
    Design d = full_design(s);
    if (std::string(name) == "fig2_elastic.json") d.items[0].capacity = 300.0;
    ActiveNetwork net = apply_design(s, d);
    SolverOptions opts = tight();
    opts.record_trace = true;
    EquilibriumState st = solve_lower_level(net, opts);
    REQUIRE(st.converged);
    REQUIRE(!st.trace.empty());
    for (const auto& phase : st.trace)
      for (size_t i = 1; i < phase.size(); ++i)
        CHECK(phase[i] <= phase[i - 1] + 1e-9 * (1.0 + std::abs(phase[i - 1])));
  }
}

TEST_CASE("MSA agrees with the line search on the relaxed problem") {
  Scenario s = load_scenario_file(data_path("fig2.json"));
  ActiveNetwork net = apply_design(s, full_design(s));
  SolverOptions msa;
  msa.step = SolverOptions::Step::Msa;
  msa.rel_gap = 1e-7;
  EquilibriumState a = solve_lower_level(net, msa);
  EquilibriumState b = solve_lower_level(net, tight());
  CHECK(a.ttt == doctest::Approx(b.ttt).epsilon(1e-4));
  CHECK(a.f0[2] == doctest::Approx(b.f0[2]).epsilon(1e-3));
}

TEST_CASE("total travel time counts every link and transfer") {
  Scenario s = load_scenario_file(data_path("fig2.json"));
  ActiveNetwork net = apply_design(s, full_design(s));
  EquilibriumState st = solve_lower_level(net, tight());
  double manual = 0.0;
  for (size_t a = 0; a < s.links.size(); ++a)
    manual += st.link_flow[a] * st.link_time[a];
  for (size_t t = 0; t < net.transfers.size(); ++t)
    manual += st.transfer_flow[t] * st.transfer_time[t];
  CHECK(st.ttt == doctest::Approx(manual).epsilon(1e-12));
  // The constant walk link contributes flow * 25.
  CHECK(st.link_flow[2] == doctest::Approx(st.f0[1]).epsilon(1e-9));
  CHECK(st.link_time[2] == 25.0);
}

TEST_CASE("seven-node unconstrained solve matches the frozen volumes") {
  Scenario s = load_scenario_file(data_path("fig5.json"));
  ActiveNetwork net = apply_design(s, full_design(s));
  EquilibriumState st = solve_lower_level(net, tight());
  REQUIRE(st.converged);
  CHECK(st.transfer_flow[0] == doctest::Approx(897.278).epsilon(1e-4));
  CHECK(st.transfer_flow[1] == doctest::Approx(465.432).epsilon(1e-4));
  CHECK(total(st.q_plus) == doctest::Approx(2548.467).epsilon(1e-4));
  CHECK(st.mu[0] == 0.0);
  CHECK(st.mu[1] == 0.0);
}
