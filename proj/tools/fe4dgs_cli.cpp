#include "cli.hpp"

int main(int argc, char** argv) { return fe4dgs::cli::run_cli(argc, argv); }
