#include "wvs/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return wvs::run_cli(argc, argv, std::cout, std::cerr); }
