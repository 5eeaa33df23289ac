#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace schemanet {

/// Exit codes of the command-line entry point.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs `schemanet <command> [options]`. `args` excludes the program name.
/// Data goes to `out`, diagnostics and progress to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace schemanet
