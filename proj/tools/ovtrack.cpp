#include <iostream>

#include "ovtrack/cli.hpp"

int main(int argc, char** argv) {
    return ovtrack::cli::main(argc, argv, {std::cout, std::cerr});
}
