#include <iostream>

#include "seekr/cli.hpp"

int main(int argc, char** argv) { return seekr::cli_main(argc, argv, std::cout, std::cerr); }
