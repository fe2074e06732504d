#include <string>
#include <vector>

#include "hieremb/commands.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return hieremb::cli_main(args);
}
