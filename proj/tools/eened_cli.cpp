#include <iostream>

#include "eened/cli.hpp"

int main(int argc, char** argv) { return eened::cli::run(argc, argv, std::cout, std::cerr); }
