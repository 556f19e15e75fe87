#include <vector>
#include <string>

#include "tclp/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return tclp::run_cli(std::move(args));
}
