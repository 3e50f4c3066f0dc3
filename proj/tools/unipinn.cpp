#include <string>
#include <vector>

#include "unipinn/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return unipinn::cli::dispatch(args);
}
