#include <string>
#include <vector>

#include "transfernet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return transfernet::run(args);
}
