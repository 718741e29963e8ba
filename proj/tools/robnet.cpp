#include <iostream>
#include <string>
#include <vector>

#include "robnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return robnet::cli::run(args, std::cout);
}
