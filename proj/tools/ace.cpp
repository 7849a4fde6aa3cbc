#include "ace/cli_io.hpp"

#include <iostream>

int main(int argc, char** argv) { return ace::cli::run_cli(argc, argv, std::cin, std::cout, std::cerr); }
