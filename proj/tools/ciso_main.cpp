#include <iostream>

#include "ciso/cli/cli.hpp"

int main(int argc, char** argv) {
    return ciso::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
