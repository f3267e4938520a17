#include <string>
#include <vector>

#include "llre/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return llre::cli::run(args);
}
