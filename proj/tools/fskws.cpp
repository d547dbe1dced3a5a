#include <iostream>

#include "fskws/cli.hpp"

int main(int argc, char** argv) { return fskws::cli::run(argc, argv, std::cout, std::cerr); }
