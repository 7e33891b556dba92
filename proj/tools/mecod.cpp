#include <iostream>

#include "mecod/cli.hpp"

int main(int argc, char** argv) { return mecod::run_cli(argc, argv, std::cout, std::cerr); }
