#include <string>
#include <vector>

#include "malimg/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return malimg::cli::run(args);
}
