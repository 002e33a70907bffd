#include <iostream>

#include "xlan/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return xlan::run_cli(args, std::cout, std::cerr);
}
