#include <iostream>

#include "lwta/cli.hpp"

int main(int argc, char** argv) {
  return lwta::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
