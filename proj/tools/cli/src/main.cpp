#include <iostream>

#include "fesloop_cli/cli.hpp"

int main(int argc, char** argv) { return fesloop::cli::run_cli(argc, argv, std::cout, std::cerr); }
