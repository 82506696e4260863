#pragma once
// Command-line entry point. Exit codes: 0 success, 1 validation error,
// 2 solver non-convergence, 3 usage error.

#include <string>
#include <vector>

namespace transfernet {

int run(const std::vector<std::string>& args);

}  // namespace transfernet
