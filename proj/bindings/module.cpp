#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <numeric>

#include "transfernet/design.hpp"
#include "transfernet/equilibrium.hpp"
#include "transfernet/paradoxlab.hpp"
#include "transfernet/scenario.hpp"

namespace py = pybind11;
using namespace transfernet;

namespace {

Design design_from_obj(const Scenario& s, const py::object& obj) {
  if (obj.is_none()) return full_design(s);
  Design d;
  for (const auto& item : obj.cast<py::list>()) {
    py::dict it = item.cast<py::dict>();
    DesignChoice c;
    c.node = it["node"].cast<std::string>();
    c.mode = it["mode"].cast<std::string>();
    c.xi = it["xi"].cast<int>();
    c.capacity = it.contains("capacity") ? it["capacity"].cast<double>() : 0.0;
    d.items.push_back(c);
  }
  return d;
}

py::dict state_to_dict(const Scenario& s, const ActiveNetwork& net,
                       const EquilibriumState& st) {
  py::dict out;
  py::dict paths;
  std::vector<double> zero_mu(net.transfers.size(), 0.0);
  for (size_t p = 0; p < net.paths.size(); ++p) {
    const Path& sp = s.paths[net.paths[p].scenario_path];
    py::dict pd;
    pd["mode"] = s.modes[net.paths[p].mode].id;
    pd["flow_existing"] = st.f0[p];
    pd["flow_generated"] = st.fplus[p];
    pd["cost"] = path_cost(net, static_cast<int>(p), st.link_flow,
                           st.transfer_flow, zero_mu);
    paths[py::str(sp.id)] = pd;
  }
  out["paths"] = paths;
  py::dict links;
  for (size_t a = 0; a < s.links.size(); ++a) {
    py::dict ld;
    ld["flow"] = st.link_flow[a];
    ld["time"] = st.link_time[a];
    links[py::str(s.links[a].id)] = ld;
  }
  out["links"] = links;
  py::list transfers;
  for (size_t t = 0; t < net.transfers.size(); ++t) {
    const TransferCandidate& tc = s.transfers[net.transfers[t].candidate];
    py::dict td;
    td["node"] = tc.node;
    td["mode"] = tc.mode;
    td["capacity"] = net.transfers[t].capacity;
    td["flow"] = st.transfer_flow[t];
    td["time"] = st.transfer_time[t];
    td["mu"] = st.mu[t];
    transfers.append(td);
  }
  out["transfers"] = transfers;
  py::dict modes;
  for (size_t m = 0; m < s.modes.size(); ++m) {
    double flow = 0.0;
    for (size_t p = 0; p < net.paths.size(); ++p)
      if (net.paths[p].mode == static_cast<int>(m))
        flow += st.f0[p] + st.fplus[p];
    modes[py::str(s.modes[m].id)] = flow;
  }
  out["mode_flows"] = modes;
  out["ttt"] = st.ttt;
  out["objective"] = st.Z;
  out["z"] = py::make_tuple(st.z1, st.z2, st.z3, st.z4, st.z5);
  out["generated"] =
      std::accumulate(st.q_plus.begin(), st.q_plus.end(), 0.0);
  out["gap"] = st.gap;
  out["iterations"] = st.iterations;
  out["outer_iterations"] = st.outer_iterations;
  out["converged"] = st.converged;
  return out;
}

}  // namespace

PYBIND11_MODULE(transfernet, m) {
  m.doc() = "multimodal transfer-network design suite";

  py::register_exception<ValidationError>(m, "ValidationError");
  py::register_exception<SolverError>(m, "SolverError");

  m.def("validate_file", [](const std::string& path) {
    Scenario s = load_scenario_file(path);
    py::dict d;
    d["name"] = s.name;
    d["nodes"] = s.nodes.size();
    d["links"] = s.links.size();
    d["paths"] = s.paths.size();
    d["modes"] = s.modes.size();
    d["transfer_candidates"] = s.transfers.size();
    return d;
  });

  m.def("round_trip", [](const std::string& text) {
    return serialize(load_scenario(text));
  });

  m.def(
      "solve",
      [](const std::string& path, const py::object& design, double theta,
         double rel_gap) {
        Scenario s = load_scenario_file(path);
        if (theta > 0.0) s.behavior = {theta, theta, theta};
        SolverOptions opts = s.solver;
        if (rel_gap > 0.0) opts.rel_gap = rel_gap;
        Design d = design_from_obj(s, design);
        ActiveNetwork net = apply_design(s, d);
        EquilibriumState st = solve_lower_level(net, opts);
        return state_to_dict(s, net, st);
      },
      py::arg("path"), py::arg("design") = py::none(), py::arg("theta") = 0.0,
      py::arg("rel_gap") = 0.0);

  m.def(
      "before_after",
      [](const std::string& path, const py::object& design, double theta) {
        Scenario s = load_scenario_file(path);
        BehaviorParams p = s.behavior;
        if (theta > 0.0) p = {theta, theta, theta};
        ParadoxReport rep = before_after(s, design_from_obj(s, design), p,
                                         s.solver);
        py::dict out;
        out["ttt_before"] = rep.ttt_before;
        out["ttt_after"] = rep.ttt_after;
        out["delta"] = rep.delta;
        out["paradox"] = rep.paradox;
        py::dict bm, am;
        for (const auto& mm : rep.before_modes)
          bm[py::str(mm.mode)] = py::make_tuple(mm.flow, mm.cost);
        for (const auto& mm : rep.after_modes)
          am[py::str(mm.mode)] = py::make_tuple(mm.flow, mm.cost);
        out["before_modes"] = bm;
        out["after_modes"] = am;
        return out;
      },
      py::arg("path"), py::arg("design") = py::none(), py::arg("theta") = 0.0);

  m.def(
      "ga_solve",
      [](const std::string& path, int population, int generations,
         std::uint64_t seed) {
        Scenario s = load_scenario_file(path);
        GaParams gp;
        if (population > 0) gp.population = population;
        if (generations > 0) gp.generations = generations;
        gp.seed = seed;
        GaResult res = ga_solve(s, gp, s.solver);
        py::dict out;
        py::list best;
        for (const auto& c : res.best.items) {
          py::dict cd;
          cd["node"] = c.node;
          cd["mode"] = c.mode;
          cd["xi"] = c.xi;
          cd["capacity"] = c.capacity;
          best.append(cd);
        }
        out["best"] = best;
        out["best_fitness"] = res.best_fitness;
        out["evaluations"] = res.evaluations;
        out["construction_cost"] = construction_cost(res.best, s);
        return out;
      },
      py::arg("path"), py::arg("population") = 0, py::arg("generations") = 0,
      py::arg("seed") = 42);

  m.def("logit_split", &logit_split, py::arg("costs"), py::arg("scale"));
  m.def("logsum", &logsum, py::arg("costs"), py::arg("scale"));

  m.def(
      "enumerate_paths",
      [](const std::string& path, const std::string& origin,
         const std::string& destination, const std::string& mode, int k) {
        Scenario s = load_scenario_file(path);
        py::list out;
        for (const Path& p : enumerate_paths(s, origin, destination, mode, k)) {
          py::dict pd;
          pd["id"] = p.id;
          pd["nodes"] = p.nodes;
          pd["links"] = p.links;
          pd["transfers"] = p.transfers;
          pd["free_flow_cost"] = free_flow_cost(s, p);
          out.append(pd);
        }
        return out;
      },
      py::arg("path"), py::arg("origin"), py::arg("destination"),
      py::arg("mode"), py::arg("k") = 10);
}
