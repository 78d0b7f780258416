#include <iostream>

#include "ncfkkt/cli.hpp"

int main(int argc, char** argv) { return ncfkkt::run_cli(argc, argv, std::cout, std::cerr); }
