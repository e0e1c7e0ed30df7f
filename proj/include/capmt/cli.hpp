#pragma once

#include <string>
#include <vector>

namespace capmt {

// Entry point behind the `capmt` binary; also callable in-process by tests.
// Returns the process exit code; every failure prints a single
// "error:<CODE>: message" line to stderr and returns nonzero.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace capmt
