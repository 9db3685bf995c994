#include <iostream>

#include "dva/cli/commands.hpp"

int main(int argc, char** argv) {
  return dva::cli::run_cli(argc, argv, std::cout, std::cerr);
}
