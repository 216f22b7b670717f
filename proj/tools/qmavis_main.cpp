#include <iostream>
#include <string>
#include <vector>

#include "qmavis/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  qmavis::cli_io io{std::cin, std::cout, std::cerr};
  return qmavis::run_cli(args, io);
}
