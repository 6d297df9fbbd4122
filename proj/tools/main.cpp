#include "dp2erm/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return dp2erm::cli::run_cli(argc, argv, std::cout, std::cerr);
}
