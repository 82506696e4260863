#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "transfernet/scenario.hpp"

using namespace transfernet;
using nlohmann::json;

namespace {

std::string data_path(const std::string& name) {
  return std::string(TRANSFERNET_DATA_DIR) + "/" + name;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json base_doc() { return json::parse(slurp(data_path("fig2.json"))); }

}  // namespace

TEST_CASE("cost function evaluation") {
  CostFn poly{CostFn::Kind::Poly, 4, 1, 500, 2};
  CHECK(poly.value(755) == doctest::Approx(6.2801).epsilon(1e-9));
  CHECK(poly.value(0) == doctest::Approx(4.0));
  CHECK(poly.integral(500) == doctest::Approx(2166.6666667).epsilon(1e-9));
  CHECK(poly.derivative(500) == doctest::Approx(2.0 * 500 / (500.0 * 500)));
  CostFn c{CostFn::Kind::Constant, 25};
  CHECK(c.value(1e9) == 25.0);
  CHECK(c.integral(10) == 250.0);
  CHECK(c.derivative(123) == 0.0);
}

TEST_CASE("shipped scenarios load with the expected shape") {
  Scenario f2 = load_scenario_file(data_path("fig2.json"));
  CHECK(f2.nodes.size() == 4);
  CHECK(f2.links.size() == 4);
  CHECK(f2.paths.size() == 3);
  CHECK(f2.transfers.size() == 1);
  CHECK(f2.policy == Policy::FixedTotal);
  CHECK(f2.behavior.theta == doctest::Approx(0.9));
  CHECK(f2.behavior.gamma == doctest::Approx(0.9));
  CHECK(f2.behavior.eta == doctest::Approx(0.9));

  Scenario fe = load_scenario_file(data_path("fig2_elastic.json"));
  CHECK(fe.policy == Policy::FixedMode);
  CHECK(fe.od[0].q0 == 100.0);
  REQUIRE(fe.od[0].a.has_value());
  CHECK(*fe.od[0].a == doctest::Approx(32.5));
  CHECK(*fe.od[0].b == doctest::Approx(0.0005));
  CHECK(fe.origins[0].o_max == 2000.0);

  Scenario f5 = load_scenario_file(data_path("fig5.json"));
  CHECK(f5.nodes.size() == 7);
  CHECK(f5.links.size() == 12);
  CHECK(f5.paths.size() == 9);
  CHECK(f5.modes.size() == 4);
  CHECK(f5.transfers.size() == 2);
  CHECK(f5.budget == doctest::Approx(22500000.0));
}

TEST_CASE("serialization round-trips") {
  for (const char* name : {"fig2.json", "fig2_elastic.json", "fig5.json"}) {
    Scenario s = load_scenario(slurp(data_path(name)));
    std::string once = serialize(s);
    Scenario s2 = load_scenario(once);
    CHECK(serialize(s2) == once);
    CHECK(s2.links.size() == s.links.size());
    CHECK(s2.paths.size() == s.paths.size());
    CHECK(s2.od.size() == s.od.size());
  }
}

TEST_CASE("validation rejects malformed scenarios") {
  SUBCASE("dangling link endpoint") {
    json j = base_doc();
    j["links"][0]["to"] = "Z";
    CHECK_THROWS_AS(load_scenario(j.dump()), ValidationError);
  }
  SUBCASE("duplicate link id") {
    json j = base_doc();
    j["links"][1]["id"] = "L1";
    CHECK_THROWS_AS(load_scenario(j.dump()), ValidationError);
  }
  SUBCASE("combined mode with a single leg") {
    json j = base_doc();
    j["modes"][2]["legs"] = {"car"};
    CHECK_THROWS_AS(load_scenario(j.dump()), ValidationError);
  }
  SUBCASE("split does not sum to q0") {
    json j = base_doc();
    j["demand"]["od"][0]["split"]["car"] = 100;
    CHECK_THROWS_AS(load_scenario(j.dump()), ValidationError);
  }
  SUBCASE("path with inconsistent link order") {
    json j = base_doc();
    j["paths"][0]["links"] = {"L2", "L1"};
    CHECK_THROWS_AS(load_scenario(j.dump()), ValidationError);
  }
  SUBCASE("unknown policy") {
    json j = base_doc();
    j["policy"] = "frozen";
    CHECK_THROWS_AS(load_scenario(j.dump()), ValidationError);
  }
  SUBCASE("negative capacity bounds") {
    json j = base_doc();
    j["transfers"][0]["c_min"] = 3000;
    CHECK_THROWS_AS(load_scenario(j.dump()), ValidationError);
  }
  SUBCASE("occupancy below one") {
    json j = base_doc();
    j["links"][0]["occupancy"] = 0.5;
    CHECK_THROWS_AS(load_scenario(j.dump()), ValidationError);
  }
  SUBCASE("error message names the offender") {
    json j = base_doc();
    j["links"][0]["to"] = "Z";
    try {
      load_scenario(j.dump());
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("L1") != std::string::npos);
      CHECK(std::string(e.what()).find("Z") != std::string::npos);
    }
  }
}

TEST_CASE("design application") {
  Scenario s = load_scenario_file(data_path("fig2.json"));
  SUBCASE("full design keeps the transfer path") {
    ActiveNetwork net = apply_design(s, full_design(s));
    CHECK(net.paths.size() == 3);
    CHECK(net.transfers.size() == 1);
    CHECK(net.transfers[0].capacity == doctest::Approx(2000.0));
    CHECK(net.od_modes.size() == 3);
    CHECK(net.od_mode_groups[0].size() == 3);
  }
  SUBCASE("empty design drops paths through closed candidates") {
    ActiveNetwork net = apply_design(s, empty_design(s));
    CHECK(net.paths.size() == 2);
    CHECK(net.transfers.empty());
    CHECK(net.od_mode_groups[0].size() == 2);
  }
  SUBCASE("capacity outside bounds rejected") {
    Design d = full_design(s);
    d.items[0].capacity = 2500.0;
    CHECK_THROWS_AS(apply_design(s, d), ValidationError);
  }
  SUBCASE("closed candidate with capacity rejected") {
    Design d = empty_design(s);
    d.items[0].capacity = 10.0;
    CHECK_THROWS_AS(apply_design(s, d), ValidationError);
  }
  SUBCASE("non-binary xi rejected") {
    Design d = full_design(s);
    d.items[0].xi = 2;
    CHECK_THROWS_AS(apply_design(s, d), ValidationError);
  }
  SUBCASE("unknown candidate rejected") {
    Design d = full_design(s);
    d.items[0].node = "B";
    CHECK_THROWS_AS(apply_design(s, d), ValidationError);
  }
}

TEST_CASE("free-flow path cost") {
  Scenario s = load_scenario_file(data_path("fig2.json"));
  CHECK(free_flow_cost(s, s.paths[0]) == doctest::Approx(47.0));   // 4 + 43
  CHECK(free_flow_cost(s, s.paths[1]) == doctest::Approx(50.0));   // 25 + 25
  CHECK(free_flow_cost(s, s.paths[2]) == doctest::Approx(34.0));   // 4 + 25 + 5
}

TEST_CASE("declared paths are returned verbatim") {
  Scenario s = load_scenario_file(data_path("fig5.json"));
  auto paths = enumerate_paths(s, "1", "4", "metro", 10);
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].id == "metro:1-2-3-4");
}

TEST_CASE("path generation on an undeclared scenario") {
  json j = base_doc();
  j.erase("paths");
  Scenario s = load_scenario(j.dump());
  auto car = enumerate_paths(s, "O", "D", "car", 10);
  REQUIRE(car.size() == 1);
  CHECK(car[0].nodes == std::vector<std::string>{"O", "A", "D"});
  CHECK(car[0].links == std::vector<std::string>{"L1", "L2"});
  auto metro = enumerate_paths(s, "O", "D", "metro", 10);
  REQUIRE(metro.size() == 1);
  CHECK(metro[0].links == std::vector<std::string>{"L3", "L4"});
  // The generator switches legs in place at a candidate node; node A has no
  // outgoing transit link, so the combined path here is declaration-only.
  CHECK(enumerate_paths(s, "O", "D", "pr", 10).empty());
  CHECK_THROWS_AS(enumerate_paths(s, "O", "D", "car", 0), ValidationError);
  CHECK_THROWS_AS(enumerate_paths(s, "O", "D", "bus", 3), ValidationError);
}

TEST_CASE("generated path sets are free-flow sorted") {
  json j = json::parse(slurp(data_path("fig5.json")));
  j.erase("paths");
  Scenario s = load_scenario(j.dump());
  auto metro = enumerate_paths(s, "6", "4", "metro", 10);
  REQUIRE(metro.size() == 2);
  CHECK(free_flow_cost(s, metro[0]) <= free_flow_cost(s, metro[1]));
  CHECK(metro[0].links == std::vector<std::string>{"11", "5"});  // 3+21 beats 25+3+21
  auto one = enumerate_paths(s, "6", "4", "metro", 1);
  CHECK(one.size() == 1);
  auto pr = enumerate_paths(s, "1", "4", "pr", 10);
  REQUIRE(pr.size() == 1);
  CHECK(pr[0].nodes == std::vector<std::string>{"1", "7", "3", "4"});
  CHECK(pr[0].transfers == std::vector<std::string>{"7"});
}

TEST_CASE("design documents load") {
  Scenario s = load_scenario_file(data_path("fig2.json"));
  Design d = load_design(R"({"designs":[{"node":"A","mode":"pr","xi":1,"capacity":500}]})");
  REQUIRE(d.items.size() == 1);
  CHECK(d.items[0].capacity == 500.0);
  ActiveNetwork net = apply_design(s, d);
  CHECK(net.transfers[0].capacity == 500.0);
  CHECK_THROWS_AS(load_design("{"), ValidationError);
}
