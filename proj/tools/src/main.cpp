#include <iostream>

#include "disents_cli/app.hpp"

int main(int argc, char** argv) { return disents::cli::run(argc, argv, std::cout, std::cerr); }
