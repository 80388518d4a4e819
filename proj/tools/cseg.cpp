#include <iostream>
#include <string>
#include <vector>

#include "cseg/cli.hpp"

int main(int argc, char** argv) {
  return cseg::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
