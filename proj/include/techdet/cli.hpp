#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace techdet {

enum ExitCode : int {
  kExitOk = 0,
  kExitInputError = 1,     // bad input, usage, or configuration
  kExitInternalError = 2,  // numerical failure or unexpected error
};

// Entry point behind the `techdet` executable. `args` excludes the program
// name. Subcommands: synth, train, detect, eval, viz.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

// Reads `key=value` lines ('#' comments, blank lines ignored) into
// `--key=value` arguments.
std::vector<std::string> config_file_args(const std::string& path);

}  // namespace techdet
