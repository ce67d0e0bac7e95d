#include <iostream>

#include "coar_cli/cli.hpp"

int main(int argc, char** argv) {
  return coar::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
