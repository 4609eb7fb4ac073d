#include <iostream>

#include "mpt/cli.hpp"

int main(int argc, char** argv) { return mpt::run_cli(argc, argv, std::cout, std::cerr); }
