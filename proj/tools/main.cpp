#include <iostream>

#include "diffedit/cli.hpp"

int main(int argc, char** argv) { return diffedit::run_cli(argc, argv, std::cout, std::cerr); }
