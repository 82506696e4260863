#include "transfernet/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"

namespace transfernet {

using nlohmann::json;

int Scenario::link_index(const std::string& id) const {
  for (size_t i = 0; i < links.size(); ++i)
    if (links[i].id == id) return static_cast<int>(i);
  return -1;
}

int Scenario::mode_index(const std::string& id) const {
  for (size_t i = 0; i < modes.size(); ++i)
    if (modes[i].id == id) return static_cast<int>(i);
  return -1;
}

int Scenario::transfer_index(const std::string& node, const std::string& mode) const {
  for (size_t i = 0; i < transfers.size(); ++i)
    if (transfers[i].node == node && transfers[i].mode == mode)
      return static_cast<int>(i);
  return -1;
}

const OriginSpec* Scenario::origin(const std::string& id) const {
  for (const auto& o : origins)
    if (o.id == id) return &o;
  return nullptr;
}

const DestinationSpec* Scenario::destination(const std::string& id) const {
  for (const auto& d : destinations)
    if (d.id == id) return &d;
  return nullptr;
}

namespace {

CostFn parse_cost_fn(const json& j, const std::string& where) {
  CostFn fn;
  std::string kind = j.value("kind", "");
  if (kind == "constant") {
    fn.kind = CostFn::Kind::Constant;
    fn.t0 = j.at("t0").get<double>();
  } else if (kind == "poly") {
    fn.kind = CostFn::Kind::Poly;
    fn.t0 = j.at("t0").get<double>();
    fn.alpha = j.at("alpha").get<double>();
    fn.kappa = j.at("kappa").get<double>();
    fn.beta = j.at("beta").get<double>();
  } else {
    throw ValidationError("unknown cost function kind '" + kind + "' at " + where);
  }
  if (fn.t0 < 0) throw ValidationError("negative t0 at " + where);
  if (fn.kind == CostFn::Kind::Poly) {
    if (fn.kappa <= 0) throw ValidationError("non-positive kappa at " + where);
    if (fn.alpha < 0) throw ValidationError("negative alpha at " + where);
    if (fn.beta < 1) throw ValidationError("beta below 1 at " + where);
  }
  return fn;
}

json cost_fn_json(const CostFn& fn) {
  json j;
  if (fn.kind == CostFn::Kind::Constant) {
    j["kind"] = "constant";
    j["t0"] = fn.t0;
  } else {
    j["kind"] = "poly";
    j["t0"] = fn.t0;
    j["alpha"] = fn.alpha;
    j["kappa"] = fn.kappa;
    j["beta"] = fn.beta;
  }
  return j;
}

void validate(const Scenario& s) {
  if (s.links.empty()) throw ValidationError("no links");
  if (s.nodes.empty()) throw ValidationError("no nodes");
  std::set<std::string> node_set(s.nodes.begin(), s.nodes.end());
  if (node_set.size() != s.nodes.size())
    throw ValidationError("duplicate node id");
  std::set<std::string> subnets;
  std::set<std::string> link_ids;
  for (const auto& l : s.links) {
    if (!link_ids.insert(l.id).second)
      throw ValidationError("duplicate link id '" + l.id + "'");
    if (!node_set.count(l.from))
      throw ValidationError("link '" + l.id + "' references unknown node '" + l.from + "'");
    if (!node_set.count(l.to))
      throw ValidationError("link '" + l.id + "' references unknown node '" + l.to + "'");
    if (l.from == l.to)
      throw ValidationError("link '" + l.id + "' is a self-loop");
    if (l.occupancy < 1.0)
      throw ValidationError("link '" + l.id + "' has occupancy below 1");
    subnets.insert(l.subnetwork);
  }
  std::set<std::string> mode_ids;
  for (const auto& m : s.modes) {
    if (!mode_ids.insert(m.id).second)
      throw ValidationError("duplicate mode id '" + m.id + "'");
    if (m.combined && m.legs.size() < 2)
      throw ValidationError("combined mode '" + m.id + "' needs at least 2 legs");
    if (!m.combined && m.legs.size() != 1)
      throw ValidationError("single mode '" + m.id + "' must have exactly 1 leg");
    for (const auto& leg : m.legs)
      if (!subnets.count(leg))
        throw ValidationError("mode '" + m.id + "' references unknown subnetwork '" + leg + "'");
  }
  for (const auto& t : s.transfers) {
    if (!node_set.count(t.node))
      throw ValidationError("transfer candidate at unknown node '" + t.node + "'");
    int mi = s.mode_index(t.mode);
    if (mi < 0)
      throw ValidationError("transfer candidate at node '" + t.node +
                            "' references unknown mode '" + t.mode + "'");
    if (!s.modes[mi].combined)
      throw ValidationError("transfer candidate at node '" + t.node +
                            "' references non-combined mode '" + t.mode + "'");
    if (t.c_min < 0 || t.c_min > t.c_max)
      throw ValidationError("transfer candidate at node '" + t.node +
                            "' has invalid capacity bounds");
    if (t.fixed_cost < 0 || t.unit_cost < 0)
      throw ValidationError("transfer candidate at node '" + t.node +
                            "' has negative cost");
  }
  // Paths: node sequence consistent with declared links, legs in mode order,
  // transfer crossings declared at candidate nodes.
  std::set<std::string> path_ids;
  for (const auto& p : s.paths) {
    if (!path_ids.insert(p.id).second)
      throw ValidationError("duplicate path id '" + p.id + "'");
    int mi = s.mode_index(p.mode);
    if (mi < 0)
      throw ValidationError("path '" + p.id + "' references unknown mode '" + p.mode + "'");
    const Mode& mode = s.modes[mi];
    if (p.nodes.size() < 2)
      throw ValidationError("path '" + p.id + "' has fewer than 2 nodes");
    if (p.nodes.front() != p.origin || p.nodes.back() != p.destination)
      throw ValidationError("path '" + p.id + "' endpoints do not match its OD pair");
    for (const auto& n : p.nodes)
      if (!node_set.count(n))
        throw ValidationError("path '" + p.id + "' references unknown node '" + n + "'");
    std::set<std::string> tset(p.transfers.begin(), p.transfers.end());
    if (tset.size() != p.transfers.size())
      throw ValidationError("path '" + p.id + "' crosses a transfer node twice");
    for (const auto& tn : p.transfers) {
      if (s.transfer_index(tn, p.mode) < 0)
        throw ValidationError("path '" + p.id + "' transfers at '" + tn +
                              "' which is not a candidate for mode '" + p.mode + "'");
      if (std::find(p.nodes.begin(), p.nodes.end(), tn) == p.nodes.end())
        throw ValidationError("path '" + p.id + "' transfer node '" + tn +
                              "' is not on the path");
    }
    size_t li = 0;
    size_t leg = 0;
    for (size_t i = 0; i + 1 < p.nodes.size(); ++i) {
      const std::string& u = p.nodes[i];
      const std::string& w = p.nodes[i + 1];
      int lk = li < p.links.size() ? s.link_index(p.links[li]) : -1;
      if (li < p.links.size() && lk < 0)
        throw ValidationError("path '" + p.id + "' references unknown link '" +
                              p.links[li] + "'");
      if (lk >= 0 && s.links[lk].from == u && s.links[lk].to == w) {
        // Advance the leg pointer to this link's subnetwork.
        size_t j = leg;
        while (j < mode.legs.size() && mode.legs[j] != s.links[lk].subnetwork) ++j;
        if (j == mode.legs.size())
          throw ValidationError("path '" + p.id + "' uses link '" + s.links[lk].id +
                                "' outside mode '" + p.mode + "' leg order");
        leg = j;
        ++li;
      } else if (tset.count(u)) {
        // The gap is spanned by the candidate's dummy transfer link.
        if (leg + 1 < mode.legs.size()) ++leg;
      } else {
        throw ValidationError("path '" + p.id + "' nodes '" + u + "'->'" + w +
                              "' are not joined by the next declared link");
      }
    }
    if (li != p.links.size())
      throw ValidationError("path '" + p.id + "' declares unused links");
    if (!mode.combined && !p.transfers.empty())
      throw ValidationError("path '" + p.id + "' of single mode crosses a transfer");
  }
  // Demand.
  if (s.origins.empty() || s.destinations.empty())
    throw ValidationError("demand needs at least one origin and destination");
  std::map<std::string, double> by_origin, by_dest;
  for (const auto& od : s.od) {
    if (!s.origin(od.origin))
      throw ValidationError("OD pair references unknown origin '" + od.origin + "'");
    if (!s.destination(od.destination))
      throw ValidationError("OD pair references unknown destination '" + od.destination + "'");
    if (od.q0 < 0) throw ValidationError("negative existing demand for OD '" +
                                         od.origin + "'->'" + od.destination + "'");
    double split_sum = 0.0;
    for (const auto& [mode, q] : od.split) {
      if (s.mode_index(mode) < 0)
        throw ValidationError("OD '" + od.origin + "'->'" + od.destination +
                              "' split references unknown mode '" + mode + "'");
      if (q < 0)
        throw ValidationError("OD '" + od.origin + "'->'" + od.destination +
                              "' has a negative split entry");
      split_sum += q;
    }
    if (!od.split.empty() && std::abs(split_sum - od.q0) > 1e-6 * std::max(1.0, od.q0))
      throw ValidationError("OD '" + od.origin + "'->'" + od.destination +
                            "' split does not sum to its existing demand");
    if (od.split.empty() && od.q0 > 0 && s.policy == Policy::FixedMode)
      throw ValidationError("OD '" + od.origin + "'->'" + od.destination +
                            "' needs a per-mode split under the fixed-mode policy");
    if (od.b && *od.b < 0)
      throw ValidationError("OD '" + od.origin + "'->'" + od.destination +
                            "' has negative demand slope");
    by_origin[od.origin] += od.q0;
    by_dest[od.destination] += od.q0;
  }
  for (const auto& o : s.origins) {
    if (o.o0 < 0 || o.o0 > o.o_max)
      throw ValidationError("origin '" + o.id + "' violates 0 <= o0 <= o_max");
    double got = by_origin.count(o.id) ? by_origin[o.id] : 0.0;
    if (std::abs(got - o.o0) > 1e-6 * std::max(1.0, o.o0))
      throw ValidationError("origin '" + o.id + "' existing demand does not sum to o0");
  }
  for (const auto& d : s.destinations) {
    if (d.d0 < 0 || d.d0 > d.d_max)
      throw ValidationError("destination '" + d.id + "' violates 0 <= d0 <= d_max");
    double got = by_dest.count(d.id) ? by_dest[d.id] : 0.0;
    if (std::abs(got - d.d0) > 1e-6 * std::max(1.0, d.d0))
      throw ValidationError("destination '" + d.id + "' existing demand does not sum to d0");
    if (d.b < 0) throw ValidationError("destination '" + d.id + "' has negative demand slope");
  }
  if (!(s.behavior.theta > 0) || !(s.behavior.gamma > 0) || !(s.behavior.eta > 0))
    throw ValidationError("behavior scales must be positive and finite");
  if (!std::isfinite(s.behavior.theta) || !std::isfinite(s.behavior.gamma) ||
      !std::isfinite(s.behavior.eta))
    throw ValidationError("behavior scales must be positive and finite");
}

}  // namespace

Scenario load_scenario(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("parse error: ") + e.what());
  }
  Scenario s;
  try {
    s.name = j.value("name", "");
    for (const auto& n : j.at("nodes")) s.nodes.push_back(n.get<std::string>());
    for (const auto& lj : j.at("links")) {
      Link l;
      l.id = lj.at("id").get<std::string>();
      l.from = lj.at("from").get<std::string>();
      l.to = lj.at("to").get<std::string>();
      l.subnetwork = lj.at("subnetwork").get<std::string>();
      l.cost = parse_cost_fn(lj.at("cost"), "link '" + l.id + "'");
      if (lj.contains("capacity") && !lj["capacity"].is_null())
        l.soft_capacity = lj["capacity"].get<double>();
      l.occupancy = lj.value("occupancy", 1.0);
      s.links.push_back(l);
    }
    for (const auto& mj : j.at("modes")) {
      Mode m;
      m.id = mj.at("id").get<std::string>();
      m.combined = mj.at("kind").get<std::string>() == "combined";
      for (const auto& leg : mj.at("legs")) m.legs.push_back(leg.get<std::string>());
      s.modes.push_back(m);
    }
    for (const auto& tj : j.value("transfers", json::array())) {
      TransferCandidate t;
      t.node = tj.at("node").get<std::string>();
      t.mode = tj.at("mode").get<std::string>();
      t.c_min = tj.at("c_min").get<double>();
      t.c_max = tj.at("c_max").get<double>();
      t.fixed_cost = tj.value("fixed_cost", 0.0);
      t.unit_cost = tj.value("unit_cost", 0.0);
      if (tj.contains("time"))
        t.transfer_time = parse_cost_fn(tj["time"], "transfer at '" + t.node + "'");
      s.transfers.push_back(t);
    }
    for (const auto& pj : j.value("paths", json::array())) {
      Path p;
      p.id = pj.at("id").get<std::string>();
      p.origin = pj.at("origin").get<std::string>();
      p.destination = pj.at("destination").get<std::string>();
      p.mode = pj.at("mode").get<std::string>();
      for (const auto& n : pj.at("nodes")) p.nodes.push_back(n.get<std::string>());
      for (const auto& l : pj.at("links")) p.links.push_back(l.get<std::string>());
      for (const auto& t : pj.value("transfers", json::array()))
        p.transfers.push_back(t.get<std::string>());
      s.paths.push_back(p);
    }
    const json& dj = j.at("demand");
    for (const auto& oj : dj.at("od")) {
      OdDemand od;
      od.origin = oj.at("origin").get<std::string>();
      od.destination = oj.at("destination").get<std::string>();
      od.q0 = oj.at("q0").get<double>();
      if (oj.contains("split"))
        for (const auto& [mode, q] : oj["split"].items())
          od.split[mode] = q.get<double>();
      if (oj.contains("a")) od.a = oj["a"].get<double>();
      if (oj.contains("b")) od.b = oj["b"].get<double>();
      s.od.push_back(od);
    }
    for (const auto& oj : dj.at("origins")) {
      OriginSpec o;
      o.id = oj.at("id").get<std::string>();
      o.o0 = oj.at("o0").get<double>();
      o.o_max = oj.at("o_max").get<double>();
      s.origins.push_back(o);
    }
    for (const auto& sj : dj.at("destinations")) {
      DestinationSpec d;
      d.id = sj.at("id").get<std::string>();
      d.d0 = sj.at("d0").get<double>();
      d.d_max = sj.at("d_max").get<double>();
      d.a = sj.value("a", 0.0);
      d.b = sj.value("b", 0.0);
      s.destinations.push_back(d);
    }
    const json& bj = j.at("behavior");
    s.behavior.theta = bj.at("theta").get<double>();
    s.behavior.gamma = bj.value("gamma", s.behavior.theta);
    s.behavior.eta = bj.value("eta", s.behavior.theta);
    s.budget = j.value("budget", 0.0);
    std::string pol = j.value("policy", "fixed_mode");
    if (pol == "fixed_mode")
      s.policy = Policy::FixedMode;
    else if (pol == "fixed_total")
      s.policy = Policy::FixedTotal;
    else
      throw ValidationError("unknown policy '" + pol + "'");
    if (j.contains("solver")) {
      const json& sj = j["solver"];
      s.solver.max_outer = sj.value("max_outer", s.solver.max_outer);
      s.solver.max_inner = sj.value("max_inner", s.solver.max_inner);
      s.solver.rel_gap = sj.value("tolerance", s.solver.rel_gap);
      s.solver.penalty_growth = sj.value("penalty_growth", s.solver.penalty_growth);
      s.solver.rho = sj.value("rho", s.solver.rho);
      s.solver.entropy_eps = sj.value("entropy_eps", s.solver.entropy_eps);
      std::string step = sj.value("step_rule", "armijo");
      s.solver.step = step == "msa" ? SolverOptions::Step::Msa
                                    : SolverOptions::Step::Armijo;
    }
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("schema error: ") + e.what());
  }
  validate(s);
  return s;
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scenario file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_scenario(ss.str());
}

std::string serialize(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["nodes"] = s.nodes;
  j["links"] = json::array();
  for (const auto& l : s.links) {
    json lj;
    lj["id"] = l.id;
    lj["from"] = l.from;
    lj["to"] = l.to;
    lj["subnetwork"] = l.subnetwork;
    lj["cost"] = cost_fn_json(l.cost);
    if (std::isfinite(l.soft_capacity)) lj["capacity"] = l.soft_capacity;
    if (l.occupancy != 1.0) lj["occupancy"] = l.occupancy;
    j["links"].push_back(lj);
  }
  j["modes"] = json::array();
  for (const auto& m : s.modes) {
    json mj;
    mj["id"] = m.id;
    mj["kind"] = m.combined ? "combined" : "single";
    mj["legs"] = m.legs;
    j["modes"].push_back(mj);
  }
  j["transfers"] = json::array();
  for (const auto& t : s.transfers) {
    json tj;
    tj["node"] = t.node;
    tj["mode"] = t.mode;
    tj["c_min"] = t.c_min;
    tj["c_max"] = t.c_max;
    tj["fixed_cost"] = t.fixed_cost;
    tj["unit_cost"] = t.unit_cost;
    tj["time"] = cost_fn_json(t.transfer_time);
    j["transfers"].push_back(tj);
  }
  j["paths"] = json::array();
  for (const auto& p : s.paths) {
    json pj;
    pj["id"] = p.id;
    pj["origin"] = p.origin;
    pj["destination"] = p.destination;
    pj["mode"] = p.mode;
    pj["nodes"] = p.nodes;
    pj["links"] = p.links;
    pj["transfers"] = p.transfers;
    j["paths"].push_back(pj);
  }
  json dj;
  dj["od"] = json::array();
  for (const auto& od : s.od) {
    json oj;
    oj["origin"] = od.origin;
    oj["destination"] = od.destination;
    oj["q0"] = od.q0;
    if (!od.split.empty()) oj["split"] = od.split;
    if (od.a) oj["a"] = *od.a;
    if (od.b) oj["b"] = *od.b;
    dj["od"].push_back(oj);
  }
  dj["origins"] = json::array();
  for (const auto& o : s.origins)
    dj["origins"].push_back({{"id", o.id}, {"o0", o.o0}, {"o_max", o.o_max}});
  dj["destinations"] = json::array();
  for (const auto& d : s.destinations)
    dj["destinations"].push_back({{"id", d.id},
                                  {"d0", d.d0},
                                  {"d_max", d.d_max},
                                  {"a", d.a},
                                  {"b", d.b}});
  j["demand"] = dj;
  j["behavior"] = {{"theta", s.behavior.theta},
                   {"gamma", s.behavior.gamma},
                   {"eta", s.behavior.eta}};
  j["budget"] = s.budget;
  j["policy"] = s.policy == Policy::FixedMode ? "fixed_mode" : "fixed_total";
  return j.dump(2);
}

Design load_design(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("design parse error: ") + e.what());
  }
  Design d;
  for (const auto& item : j.at("designs")) {
    DesignChoice c;
    c.node = item.at("node").get<std::string>();
    c.mode = item.at("mode").get<std::string>();
    c.xi = item.at("xi").get<int>();
    c.capacity = item.value("capacity", 0.0);
    d.items.push_back(c);
  }
  return d;
}

Design load_design_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open design file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_design(ss.str());
}

Design full_design(const Scenario& s) {
  Design d;
  for (const auto& t : s.transfers)
    d.items.push_back({t.node, t.mode, 1, t.c_max});
  return d;
}

Design empty_design(const Scenario& s) {
  Design d;
  for (const auto& t : s.transfers) d.items.push_back({t.node, t.mode, 0, 0.0});
  return d;
}

ActiveNetwork apply_design(const Scenario& s, const Design& d) {
  for (const auto& item : d.items)
    if (s.transfer_index(item.node, item.mode) < 0)
      throw ValidationError("design references unknown transfer candidate '" +
                            item.node + "'/" + item.mode);
  ActiveNetwork net;
  net.scenario = &s;
  net.design = d;
  std::vector<int> open_index(s.transfers.size(), -1);
  for (size_t i = 0; i < s.transfers.size(); ++i) {
    const auto& t = s.transfers[i];
    const DesignChoice* c = d.find(t.node, t.mode);
    int xi = c ? c->xi : 0;
    double cap = c ? c->capacity : 0.0;
    if (xi != 0 && xi != 1)
      throw ValidationError("design at node '" + t.node + "' has non-binary xi");
    if (xi == 1) {
      if (cap < t.c_min || cap > t.c_max)
        throw ValidationError("design capacity " + std::to_string(cap) +
                              " at node '" + t.node + "' outside [" +
                              std::to_string(t.c_min) + ", " +
                              std::to_string(t.c_max) + "]");
      open_index[i] = static_cast<int>(net.transfers.size());
      net.transfers.push_back({static_cast<int>(i), cap});
    } else if (cap != 0.0) {
      throw ValidationError("design at node '" + t.node +
                            "' has xi = 0 but non-zero capacity");
    }
  }
  // OD index lookup.
  auto od_index = [&s](const std::string& o, const std::string& dd) {
    for (size_t i = 0; i < s.od.size(); ++i)
      if (s.od[i].origin == o && s.od[i].destination == dd)
        return static_cast<int>(i);
    return -1;
  };
  std::map<std::pair<int, int>, int> group_of;  // (od, mode) -> od_modes idx
  for (size_t pi = 0; pi < s.paths.size(); ++pi) {
    const Path& p = s.paths[pi];
    int od = od_index(p.origin, p.destination);
    if (od < 0) continue;  // path for an OD pair with no demand entry
    bool usable = true;
    ActivePath ap;
    ap.scenario_path = static_cast<int>(pi);
    ap.od = od;
    ap.mode = s.mode_index(p.mode);
    for (const auto& lid : p.links) ap.links.push_back(s.link_index(lid));
    for (const auto& tn : p.transfers) {
      int ti = s.transfer_index(tn, p.mode);
      if (open_index[ti] < 0) {
        usable = false;
        break;
      }
      ap.transfers.push_back(open_index[ti]);
    }
    if (!usable) continue;
    int pid = static_cast<int>(net.paths.size());
    net.paths.push_back(ap);
    auto key = std::make_pair(od, ap.mode);
    auto it = group_of.find(key);
    if (it == group_of.end()) {
      group_of[key] = static_cast<int>(net.od_modes.size());
      net.od_modes.push_back({od, ap.mode, {pid}});
    } else {
      net.od_modes[it->second].paths.push_back(pid);
    }
  }
  net.od_mode_groups.assign(s.od.size(), {});
  for (size_t g = 0; g < net.od_modes.size(); ++g)
    net.od_mode_groups[net.od_modes[g].od].push_back(static_cast<int>(g));
  net.origin_ods.assign(s.origins.size(), {});
  for (size_t oi = 0; oi < s.origins.size(); ++oi)
    for (size_t od = 0; od < s.od.size(); ++od)
      if (s.od[od].origin == s.origins[oi].id)
        net.origin_ods[oi].push_back(static_cast<int>(od));
  return net;
}

double free_flow_cost(const Scenario& s, const Path& p) {
  double c = 0.0;
  for (const auto& lid : p.links) {
    int li = s.link_index(lid);
    if (li >= 0) c += s.links[li].cost.value(0.0);
  }
  for (const auto& tn : p.transfers) {
    int ti = s.transfer_index(tn, p.mode);
    if (ti >= 0) c += s.transfers[ti].transfer_time.value(0.0);
  }
  return c;
}

std::vector<Path> enumerate_paths(const Scenario& s, const std::string& origin,
                                  const std::string& destination,
                                  const std::string& mode, int k) {
  if (k < 1) throw ValidationError("enumerate_paths needs k >= 1");
  int mi = s.mode_index(mode);
  if (mi < 0) throw ValidationError("unknown mode '" + mode + "'");
  std::vector<Path> declared;
  for (const auto& p : s.paths)
    if (p.origin == origin && p.destination == destination && p.mode == mode)
      declared.push_back(p);
  if (!declared.empty()) return declared;

  // Fallback generator: depth-first search over (node, leg) states. Leg
  // switches happen in place at candidate nodes of this mode.
  const Mode& m = s.modes[mi];
  std::vector<Path> found;
  std::vector<std::string> nodes{origin};
  std::vector<std::string> links;
  std::vector<std::string> transfers;
  std::set<std::string> visited{origin};

  std::function<void(const std::string&, size_t)> dfs =
      [&](const std::string& node, size_t leg) {
        if (node == destination && leg == m.legs.size() - 1) {
          Path p;
          p.id = mode + ":" + origin + "-" + destination + ":" +
                 std::to_string(found.size() + 1);
          p.origin = origin;
          p.destination = destination;
          p.mode = mode;
          p.nodes = nodes;
          p.links = links;
          p.transfers = transfers;
          found.push_back(p);
          return;
        }
        for (const auto& l : s.links) {
          if (l.from != node || l.subnetwork != m.legs[leg]) continue;
          if (visited.count(l.to)) continue;
          visited.insert(l.to);
          nodes.push_back(l.to);
          links.push_back(l.id);
          dfs(l.to, leg);
          links.pop_back();
          nodes.pop_back();
          visited.erase(l.to);
        }
        if (leg + 1 < m.legs.size() && s.transfer_index(node, mode) >= 0 &&
            std::find(transfers.begin(), transfers.end(), node) == transfers.end()) {
          transfers.push_back(node);
          dfs(node, leg + 1);
          transfers.pop_back();
        }
      };
  dfs(origin, 0);
  std::stable_sort(found.begin(), found.end(), [&s](const Path& a, const Path& b) {
    double ca = free_flow_cost(s, a), cb = free_flow_cost(s, b);
    if (ca != cb) return ca < cb;
    return a.nodes < b.nodes;
  });
  if (static_cast<int>(found.size()) > k) found.resize(k);
  for (size_t i = 0; i < found.size(); ++i)
    found[i].id = mode + ":" + origin + "-" + destination + ":" + std::to_string(i + 1);
  return found;
}

}  // namespace transfernet
