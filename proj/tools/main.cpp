#include <iostream>
#include <string>
#include <vector>

#include "digen/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return digen::cli_main(args, std::cout, std::cerr);
}
