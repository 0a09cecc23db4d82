#include <iostream>
#include <string>
#include <vector>

#include "featviz/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return featviz::cli::run(args, std::cout, std::cerr);
}
