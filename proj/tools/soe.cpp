#include <iostream>
#include <string>
#include <vector>

#include "soe/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return soe::cli_dispatch(args, std::cout, std::cerr);
}
