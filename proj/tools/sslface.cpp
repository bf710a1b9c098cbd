#include <iostream>
#include <string>
#include <vector>

#include "sslface/cli.hpp"

int main(int argc, char** argv) {
  return sslface::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
