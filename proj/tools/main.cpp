#include "handmim/cli.hpp"

int main(int argc, char** argv) { return handmim::cli_main(argc, argv); }
