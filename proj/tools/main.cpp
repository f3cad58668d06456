#include <iostream>
#include <string>
#include <vector>

#include "qvp/cli.h"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return qvp::cli::run_command(args, std::cout, std::cerr);
}
