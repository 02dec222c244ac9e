#include <iostream>
#include <string>
#include <vector>

#include "nmo/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return nmo::cli::run(args, nmo::profiler::process_env(), std::cout, std::cerr);
}
