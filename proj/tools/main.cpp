#include "cli.hpp"

int main(int argc, char** argv) { return csba::cli::run(std::vector<std::string>(argv, argv + argc)); }
