#include <string>
#include <vector>

#include "cli_app.hpp"

int main(int argc, char** argv) {
    return driftscope::cli::run(std::vector<std::string>(argv, argv + argc));
}
