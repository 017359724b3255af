#include <iostream>

#include "boostformer/experiment.hpp"

int main(int argc, char** argv) { return boostformer::run_cli(argc, argv, std::cout, std::cerr); }
