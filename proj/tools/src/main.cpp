#include <iostream>

#include "fssuavl/cli/commands.hpp"

int main(int argc, char** argv) {
  return fssuavl::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
