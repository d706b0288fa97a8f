#include <iostream>

#include "hens/cli.hpp"

int main(int argc, char** argv) { return hens::cli::run(argc, argv, std::cout, std::cerr); }
