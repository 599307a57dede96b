#include <iostream>

#include "conceptmem/cli.hpp"

int main(int argc, char** argv) { return cmem::run_cli(argc, argv, std::cout, std::cerr); }
