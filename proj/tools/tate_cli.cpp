#include <iostream>

#include "tate/cli.hpp"

int main(int argc, char** argv) { return tate::cli::run(argc, argv, std::cout, std::cerr); }
