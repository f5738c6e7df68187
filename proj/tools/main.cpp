#include <iostream>
#include <string>
#include <vector>

#include "mednli/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mednli::run_cli(args, std::cout, std::cerr);
}
