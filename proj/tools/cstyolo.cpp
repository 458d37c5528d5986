#include <iostream>

#include "cstyolo/cli.hpp"

int main(int argc, char** argv) { return cstyolo::cli::run(argc, argv, std::cout, std::cerr); }
