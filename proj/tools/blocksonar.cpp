#include <iostream>
#include <string>
#include <vector>

#include "blocksonar/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return blocksonar::cli::run_cli(args, std::cout, std::cerr);
}
