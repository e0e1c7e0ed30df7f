#include "capmt/cli.hpp"

int main(int argc, char** argv) { return capmt::run_cli(argc, argv); }
