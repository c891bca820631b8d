#include "gem/cli/commands.hpp"

int main(int argc, char** argv) { return gem::cli::run_cli(argc, argv); }
