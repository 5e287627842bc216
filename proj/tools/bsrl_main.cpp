#include "bsrl/cli.hpp"

int main(int argc, char** argv) { return bsrl::run_cli(argc, argv); }
