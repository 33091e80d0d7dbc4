#include "npsa/cli.hpp"

int main(int argc, char** argv) { return npsa::run_cli(argc, argv); }
