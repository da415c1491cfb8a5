#include <iostream>

#include "hsdf/cli.hpp"

int main(int argc, char** argv) {
  return hsdf::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
