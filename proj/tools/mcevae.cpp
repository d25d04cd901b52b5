// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "mcevae/cli.hpp"

int main(int argc, char** argv) { return mcevae::cli::run(argc, argv, std::cout, std::cerr); }
