#include <iostream>

#include "pvd/cli.hpp"

int main(int argc, char** argv) { return pvd::run_cli(argc, argv, std::cout, std::cerr); }
