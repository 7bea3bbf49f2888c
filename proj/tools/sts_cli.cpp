#include "sts/cli.hpp"

int main(int argc, char** argv) { return sts::cli::run_command(argc, argv); }
