#include <iostream>

#include "advsec/experiment.hpp"

int main(int argc, char** argv) { return advsec::cli(argc, argv, std::cout, std::cerr); }
