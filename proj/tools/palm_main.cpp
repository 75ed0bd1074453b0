#include <iostream>
#include <string>
#include <vector>

#include "palm/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return palm::cli::run(args, std::cout, std::cerr);
}
