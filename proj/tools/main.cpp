#include <iostream>
#include <string>
#include <vector>

#include "dualstyle/cli.hpp"
#include "dualstyle/numerics.hpp"

int main(int argc, char** argv) {
  dualstyle::tune_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return dualstyle::run_cli(args, std::cout, std::cerr);
}
