#include <iostream>

#include "ambigraph/cli.hpp"

int main(int argc, char** argv) { return ambigraph::cli::run(argc, argv, std::cout, std::cerr); }
