#pragma once
// Scenario ingestion, validation, serialization, design application and
// path-set management.

#include <string>
#include <vector>

#include "transfernet/types.hpp"

namespace transfernet {

// Parse and validate a scenario JSON document. Throws ValidationError with a
// message naming the offending entity.
Scenario load_scenario(const std::string& text);
Scenario load_scenario_file(const std::string& path);

// Serialize back to JSON; serialize(load_scenario(t)) reparses to a
// structurally equal scenario.
std::string serialize(const Scenario& s);

// Parse a design document ({"designs":[{"node","mode","xi","capacity"}]}).
Design load_design(const std::string& text);
Design load_design_file(const std::string& path);

// A design opening every candidate at its maximum capacity.
Design full_design(const Scenario& s);
// The do-nothing design (all xi = 0).
Design empty_design(const Scenario& s);

// Apply a design: open candidates become usable transfer points with a hard
// capacity; paths through closed candidates are dropped. Throws
// ValidationError when an opened capacity falls outside [c_min, c_max].
ActiveNetwork apply_design(const Scenario& s, const Design& d);

// Explicit path sets are returned verbatim; otherwise up to k loop-free
// least-free-flow-cost paths are generated, sorted by free-flow cost with
// lexicographic node-sequence tie-breaks.
std::vector<Path> enumerate_paths(const Scenario& s, const std::string& origin,
                                  const std::string& destination,
                                  const std::string& mode, int k);

// Free-flow cost of a path (link t0 plus zero-flow transfer times).
double free_flow_cost(const Scenario& s, const Path& p);

}  // namespace transfernet
