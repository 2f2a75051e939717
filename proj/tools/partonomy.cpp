#include <iostream>

#include "partonomy/commands.hpp"

int main(int argc, char** argv) {
  return partonomy::cli::run(argc, argv, std::cout);
}
