#include "hrl/cli.hpp"

int main(int argc, char** argv) { return hrl::cli::run(argc, argv); }
