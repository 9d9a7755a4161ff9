#include <iostream>
#include <string>
#include <vector>

#include "opsdl/cli/cli.hpp"

int main(int argc, char** argv) {
  return opsdl::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
