#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace prefillsim::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kCapacityError = 3,
  kIoError = 4,
};

// Runs one command line (without the program name). Results go to `out`
// unless --out names a file; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prefillsim::cli
