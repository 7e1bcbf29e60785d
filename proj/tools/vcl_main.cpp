#include <iostream>
#include <string>
#include <vector>

#include "vcl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return vcl::cli::run(args, std::cout, std::cerr);
}
