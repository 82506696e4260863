#include "transfernet/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "transfernet/csv.hpp"
#include "transfernet/design.hpp"
#include "transfernet/paradoxlab.hpp"
#include "transfernet/scenario.hpp"

namespace transfernet {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json options_json(const SolverOptions& o) {
  return json{{"max_outer", o.max_outer},
              {"max_inner", o.max_inner},
              {"rel_gap", o.rel_gap},
              {"penalty_growth", o.penalty_growth},
              {"step", o.step == SolverOptions::Step::Msa ? "msa" : "armijo"},
              {"entropy_eps", o.entropy_eps},
              {"rho", o.rho}};
}

json behavior_json(const BehaviorParams& b) {
  return json{{"theta", b.theta}, {"gamma", b.gamma}, {"eta", b.eta}};
}

int effective_threads() {
  if (const char* env = std::getenv("TRANSFERNET_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  return hw > 0 ? hw : 1;
}

void write_run_meta(const fs::path& dir, json meta) {
  meta["threads"] = effective_threads();
  std::ofstream out(dir / "run_meta.json", std::ios::binary);
  out << meta.dump(2) << '\n';
}

json design_json(const Design& d) {
  json arr = json::array();
  for (const auto& c : d.items)
    arr.push_back({{"node", c.node},
                   {"mode", c.mode},
                   {"xi", c.xi},
                   {"capacity", c.capacity}});
  return json{{"designs", arr}};
}

void write_solution_csvs(const fs::path& dir, const Scenario& s,
                         const ActiveNetwork& net, const EquilibriumState& st) {
  {
    CsvWriter w((dir / "path_flows.csv").string());
    w.row({"path", "origin", "destination", "mode", "flow_existing",
           "flow_generated", "flow_total", "cost"});
    std::vector<double> zero_mu(net.transfers.size(), 0.0);
    for (size_t p = 0; p < net.paths.size(); ++p) {
      const Path& sp = s.paths[net.paths[p].scenario_path];
      double c = path_cost(net, static_cast<int>(p), st.link_flow,
                           st.transfer_flow, zero_mu);
      w.row({sp.id, sp.origin, sp.destination, sp.mode, cell(st.f0[p]),
             cell(st.fplus[p]), cell(st.f0[p] + st.fplus[p]), cell(c)});
    }
  }
  {
    CsvWriter w((dir / "link_flows.csv").string());
    w.row({"link", "from", "to", "flow", "time"});
    for (size_t a = 0; a < s.links.size(); ++a)
      w.row({s.links[a].id, s.links[a].from, s.links[a].to,
             cell(st.link_flow[a]), cell(st.link_time[a])});
  }
  {
    CsvWriter w((dir / "transfers.csv").string());
    w.row({"node", "mode", "capacity", "flow", "time", "mu"});
    for (size_t t = 0; t < net.transfers.size(); ++t) {
      const TransferCandidate& tc = s.transfers[net.transfers[t].candidate];
      w.row({tc.node, tc.mode, cell(net.transfers[t].capacity),
             cell(st.transfer_flow[t]), cell(st.transfer_time[t]),
             cell(st.mu[t])});
    }
  }
  {
    CsvWriter w((dir / "summary.csv").string());
    double gen = std::accumulate(st.q_plus.begin(), st.q_plus.end(), 0.0);
    w.row({"metric", "value"});
    w.row({"ttt", cell(st.ttt)});
    w.row({"objective", cell(st.Z)});
    w.row({"z1", cell(st.z1)});
    w.row({"z2", cell(st.z2)});
    w.row({"z3", cell(st.z3)});
    w.row({"z4", cell(st.z4)});
    w.row({"z5", cell(st.z5)});
    w.row({"generated", cell(gen)});
    w.row({"gap", cell(st.gap)});
    w.row({"iterations", cell(static_cast<long>(st.iterations))});
    w.row({"outer_iterations", cell(st.outer_iterations)});
    w.row({"converged", st.converged ? "1" : "0"});
  }
}

struct Common {
  std::string scenario_path;
  std::string out_dir = "out";
  std::uint64_t seed = 42;
  double rel_gap = 0.0;  // 0: keep scenario/default
  long max_inner = 0;
  int max_outer = 0;
  bool msa = false;
  double theta = 0.0;  // 0: keep scenario value (moves gamma/eta too)
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("scenario", c.scenario_path, "scenario JSON file")
      ->required();
  cmd->add_option("--out", c.out_dir, "output directory");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--rel-gap", c.rel_gap, "convergence tolerance");
  cmd->add_option("--max-inner", c.max_inner, "inner iteration budget");
  cmd->add_option("--max-outer", c.max_outer, "multiplier update budget");
  cmd->add_flag("--msa", c.msa, "use MSA steps instead of the line search");
  cmd->add_option("--theta", c.theta,
                  "override the choice scales (theta, gamma and eta move "
                  "together)");
}

Scenario load_common(const Common& c, SolverOptions& opts) {
  Scenario s = load_scenario_file(c.scenario_path);
  opts = s.solver;
  if (c.rel_gap > 0.0) opts.rel_gap = c.rel_gap;
  if (c.max_inner > 0) opts.max_inner = c.max_inner;
  if (c.max_outer > 0) opts.max_outer = c.max_outer;
  if (c.msa) opts.step = SolverOptions::Step::Msa;
  if (c.theta > 0.0) s.behavior = {c.theta, c.theta, c.theta};
  return s;
}

json meta_common(const std::string& command, const Common& c, const Scenario& s,
                 const SolverOptions& opts) {
  return json{{"command", command},
              {"scenario", c.scenario_path},
              {"scenario_name", s.name},
              {"seed", c.seed},
              {"behavior", behavior_json(s.behavior)},
              {"policy",
               s.policy == Policy::FixedMode ? "fixed_mode" : "fixed_total"},
              {"solver", options_json(opts)}};
}

std::vector<double> arange(double from, double to, double step) {
  std::vector<double> v;
  for (double x = from; x <= to + 1e-9 * step; x += step) v.push_back(x);
  return v;
}

int cmd_validate(const Common& c) {
  Scenario s = load_scenario_file(c.scenario_path);
  std::cout << s.name << ": " << s.nodes.size() << " nodes, " << s.links.size()
            << " links, " << s.paths.size() << " paths, " << s.modes.size()
            << " modes, " << s.transfers.size() << " transfer candidates"
            << std::endl;
  std::cout << "OK" << std::endl;
  return 0;
}

int cmd_solve(const Common& c, const std::string& design_path, bool full,
              bool empty, bool trace) {
  SolverOptions opts;
  Scenario s = load_common(c, opts);
  opts.record_trace = trace;
  Design d;
  if (!design_path.empty())
    d = load_design_file(design_path);
  else if (empty)
    d = empty_design(s);
  else
    d = full_design(s);
  ActiveNetwork net = apply_design(s, d);
  EquilibriumState st = solve_lower_level(net, opts);
  fs::create_directories(c.out_dir);
  write_solution_csvs(c.out_dir, s, net, st);
  json meta = meta_common("solve", c, s, opts);
  meta["design"] = design_json(d);
  meta["converged"] = st.converged;
  meta["ttt"] = st.ttt;
  meta["outputs"] = {"path_flows.csv", "link_flows.csv", "transfers.csv",
                     "summary.csv"};
  write_run_meta(c.out_dir, meta);
  double gen = std::accumulate(st.q_plus.begin(), st.q_plus.end(), 0.0);
  std::cout << "ttt=" << format_number(st.ttt) << " generated="
            << format_number(gen) << " gap=" << format_number(st.gap)
            << " iterations=" << st.iterations << std::endl;
  if (!st.converged) {
    std::cerr << "solver did not converge: " << st.message << std::endl;
    return 2;
  }
  return 0;
}

int cmd_design(const Common& c, int population, int generations, bool penalty) {
  SolverOptions opts;
  Scenario s = load_common(c, opts);
  GaParams gp;
  gp.seed = c.seed;
  if (population > 0) gp.population = population;
  if (generations > 0) gp.generations = generations;
  if (penalty) gp.infeasible = GaParams::Infeasible::Penalty;
  GaResult res = ga_solve(s, gp, opts);
  fs::create_directories(c.out_dir);
  {
    CsvWriter w((fs::path(c.out_dir) / "ga_history.csv").string());
    w.row({"generation", "best", "mean", "evaluations"});
    for (const auto& g : res.history)
      w.row({cell(g.generation), cell(g.best), cell(g.mean),
             cell(g.evaluations)});
  }
  {
    std::ofstream out(fs::path(c.out_dir) / "best_design.json",
                      std::ios::binary);
    json bd = design_json(res.best);
    bd["fitness"] = res.best_fitness;
    bd["construction_cost"] = construction_cost(res.best, s);
    out << bd.dump(2) << '\n';
  }
  json meta = meta_common("design", c, s, opts);
  meta["ga"] = {{"population", gp.population},
                {"generations", gp.generations},
                {"crossover_rate", gp.crossover_rate},
                {"mutation_rate", gp.mutation_rate},
                {"capacity_step", gp.capacity_step},
                {"tournament", gp.tournament},
                {"elitism", gp.elitism},
                {"infeasible",
                 penalty ? "penalty" : "repair"},
                {"seed", gp.seed}};
  meta["best_fitness"] = res.best_fitness;
  meta["evaluations"] = res.evaluations;
  meta["outputs"] = {"ga_history.csv", "best_design.json"};
  write_run_meta(c.out_dir, meta);
  std::cout << "best_fitness=" << format_number(res.best_fitness)
            << " cost=" << format_number(construction_cost(res.best, s))
            << " evaluations=" << res.evaluations << std::endl;
  return 0;
}

void write_sweep_csv(const fs::path& path, const SweepSeries& ser,
                     bool with_shares) {
  CsvWriter w(path.string());
  std::vector<std::string> head = {ser.parameter, "ttt_before", "ttt_after",
                                   "delta"};
  std::vector<std::string> modes;
  if (!ser.points.empty())
    for (const auto& mm : ser.points.front().modes) modes.push_back(mm.mode);
  if (with_shares) {
    head.push_back("generated");
    head.push_back("total_demand");
  }
  for (const auto& m : modes) {
    head.push_back("flow_" + m);
    if (with_shares) head.push_back("share_" + m);
    head.push_back("cost_" + m);
  }
  w.row(head);
  for (const auto& pt : ser.points) {
    std::vector<std::string> row = {cell(pt.value), cell(pt.ttt_before),
                                    cell(pt.ttt_after),
                                    cell(pt.ttt_after - pt.ttt_before)};
    if (with_shares) {
      row.push_back(cell(pt.generated));
      row.push_back(cell(pt.total_demand));
    }
    for (const auto& mm : pt.modes) {
      row.push_back(cell(mm.flow));
      if (with_shares)
        row.push_back(cell(pt.total_demand > 0.0 ? mm.flow / pt.total_demand
                                                 : 0.0));
      row.push_back(cell(mm.cost));
    }
    w.row(row);
  }
}

int cmd_sweep(const Common& c, const std::string& parameter, double from,
              double to, double step) {
  SolverOptions opts;
  Scenario s = load_common(c, opts);
  if (step <= 0.0 || to < from)
    throw CLI::ValidationError("--from/--to/--step do not form a grid");
  std::vector<double> grid = arange(from, to, step);
  fs::create_directories(c.out_dir);
  SweepSeries ser;
  if (parameter == "theta") {
    ser = sweep_theta(s, full_design(s), grid, opts);
  } else if (parameter == "capacity") {
    ser = sweep_capacity(s, grid, s.behavior.theta, opts);
  } else if (parameter == "share") {
    ser = share_sweep(s, grid, s.behavior, opts);
  } else {
    throw CLI::ValidationError("unknown sweep parameter '" + parameter + "'");
  }
  write_sweep_csv(fs::path(c.out_dir) / "sweep.csv", ser, parameter == "share");
  json meta = meta_common("sweep", c, s, opts);
  meta["parameter"] = parameter;
  meta["grid"] = {{"from", from}, {"to", to}, {"step", step}};
  if (ser.crossover) meta["crossover"] = *ser.crossover;
  if (!ser.boundaries.empty()) meta["boundaries"] = ser.boundaries;
  if (ser.minimizer) meta["minimizer"] = *ser.minimizer;
  meta["outputs"] = {"sweep.csv"};
  write_run_meta(c.out_dir, meta);
  std::cout << "points=" << ser.points.size() << std::endl;
  return 0;
}

int cmd_experiment(const Common& c, const std::string& name) {
  SolverOptions opts;
  Scenario s = load_common(c, opts);
  fs::create_directories(c.out_dir);
  json meta = meta_common("experiment", c, s, opts);
  meta["name"] = name;

  if (name == "table1") {
    ParadoxReport rep = before_after(s, full_design(s), s.behavior, opts);
    CsvWriter w((fs::path(c.out_dir) / "table1.csv").string());
    w.row({"quantity", "before", "after", "delta"});
    for (const auto& bm : rep.before_modes) {
      double after_flow = 0.0, after_cost = 0.0;
      for (const auto& am : rep.after_modes)
        if (am.mode == bm.mode) {
          after_flow = am.flow;
          after_cost = am.cost;
        }
      w.row({"flow_" + bm.mode, cell(bm.flow), cell(after_flow),
             cell(after_flow - bm.flow)});
      w.row({"cost_" + bm.mode, cell(bm.cost), cell(after_cost),
             cell(after_cost - bm.cost)});
    }
    for (const auto& am : rep.after_modes) {
      bool in_before = false;
      for (const auto& bm : rep.before_modes) in_before |= bm.mode == am.mode;
      if (!in_before)
        w.row({"flow_" + am.mode, "0", cell(am.flow), cell(am.flow)});
    }
    w.row({"ttt", cell(rep.ttt_before), cell(rep.ttt_after), cell(rep.delta)});
    meta["paradox"] = rep.paradox;
    meta["outputs"] = {"table1.csv"};
  } else if (name == "fig3a") {
    SweepSeries ser = sweep_theta(s, full_design(s), arange(0.10, 0.90, 0.01),
                                  opts);
    write_sweep_csv(fs::path(c.out_dir) / "fig3a.csv", ser, false);
    if (ser.crossover) meta["crossover"] = *ser.crossover;
    meta["outputs"] = {"fig3a.csv"};
  } else if (name == "fig3b") {
    SweepSeries ser =
        sweep_capacity(s, arange(50, 2000, 50), s.behavior.theta, opts);
    write_sweep_csv(fs::path(c.out_dir) / "fig3b.csv", ser, false);
    if (!ser.boundaries.empty()) meta["boundaries"] = ser.boundaries;
    if (ser.minimizer) meta["minimizer"] = *ser.minimizer;
    meta["outputs"] = {"fig3b.csv"};
  } else if (name == "fig4") {
    SweepSeries ser = share_sweep(s, arange(100, 2000, 100), s.behavior, opts);
    write_sweep_csv(fs::path(c.out_dir) / "fig4.csv", ser, true);
    meta["outputs"] = {"fig4.csv"};
  } else if (name == "fig6") {
    ShareGrid grid = transit_share_grid(s, arange(300, 1500, 50),
                                        arange(400, 800, 50), opts);
    CsvWriter w((fs::path(c.out_dir) / "fig6.csv").string());
    w.row({"cap_1", "cap_2", "transit_share", "feasible", "generated"});
    for (size_t i = 0; i < grid.bike_caps.size(); ++i)
      for (size_t j = 0; j < grid.car_caps.size(); ++j)
        w.row({cell(grid.bike_caps[i]), cell(grid.car_caps[j]),
               cell(grid.share[i][j]), std::string(1, grid.feasible[i][j]),
               cell(grid.fitness[i][j])});
    // Best budget-feasible cell.
    double best = -1.0;
    size_t bi = 0, bj = 0;
    for (size_t i = 0; i < grid.bike_caps.size(); ++i)
      for (size_t j = 0; j < grid.car_caps.size(); ++j)
        if (grid.feasible[i][j] == 'Y' && grid.fitness[i][j] > best) {
          best = grid.fitness[i][j];
          bi = i;
          bj = j;
        }
    if (best >= 0.0)
      meta["optimum"] = {{"cap_1", grid.bike_caps[bi]},
                         {"cap_2", grid.car_caps[bj]},
                         {"generated", best}};
    meta["outputs"] = {"fig6.csv"};
  } else {
    throw CLI::ValidationError("unknown experiment '" + name + "'");
  }
  write_run_meta(c.out_dir, meta);
  std::cout << "experiment " << name << " written to " << c.out_dir
            << std::endl;
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"multimodal transfer-network design suite"};
  app.require_subcommand(1);

  Common c_validate, c_solve, c_design, c_sweep, c_exp;
  std::string design_path, sweep_param, exp_name;
  bool full = false, empty = false, trace = false, penalty = false;
  int population = 0, generations = 0;
  double from = 0.0, to = 0.0, step = 0.0;

  CLI::App* v = app.add_subcommand("validate", "parse and validate a scenario");
  v->add_option("scenario", c_validate.scenario_path, "scenario JSON file")
      ->required();

  CLI::App* so = app.add_subcommand("solve", "solve the lower level");
  add_common(so, c_solve);
  so->add_option("--design", design_path, "design JSON file");
  so->add_flag("--full-design", full, "open every candidate at c_max (default)");
  so->add_flag("--empty-design", empty, "do-nothing design");
  so->add_flag("--trace", trace, "record the inner objective trace");

  CLI::App* de = app.add_subcommand("design", "genetic upper-level search");
  add_common(de, c_design);
  de->add_option("--population", population, "population size");
  de->add_option("--generations", generations, "generation count");
  de->add_flag("--penalty", penalty, "penalize instead of repairing");

  CLI::App* sw = app.add_subcommand("sweep", "one-dimensional sweep");
  add_common(sw, c_sweep);
  sw->add_option("--parameter", sweep_param, "theta | capacity | share")
      ->required();
  sw->add_option("--from", from, "grid start")->required();
  sw->add_option("--to", to, "grid end")->required();
  sw->add_option("--step", step, "grid step")->required();

  CLI::App* ex = app.add_subcommand("experiment", "canned experiment");
  add_common(ex, c_exp);
  ex->add_option("--name", exp_name,
                 "table1 | fig3a | fig3b | fig4 | fig6")
      ->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  try {
    if (v->parsed()) return cmd_validate(c_validate);
    if (so->parsed()) return cmd_solve(c_solve, design_path, full, empty, trace);
    if (de->parsed()) return cmd_design(c_design, population, generations,
                                        penalty);
    if (sw->parsed()) return cmd_sweep(c_sweep, sweep_param, from, to, step);
    if (ex->parsed()) return cmd_experiment(c_exp, exp_name);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << std::endl;
    return 1;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 3;
}

}  // namespace transfernet
