#pragma once

#include <string>
#include <vector>

namespace rkbf {

// Command-line entry point, callable in-process (tests) or from main().
// Subcommands: simulate | filter | robust | game | eval, each driven by a
// JSON run config (--config). Exit codes: 0 success, 2 configuration
// error, 3 runtime error.
int run_cli(int argc, const char* const* argv);

// Convenience wrapper; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace rkbf
