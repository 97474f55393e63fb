#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace smlm {

/// Exit statuses of run_cli.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitUsage = 2;

/// Runs the smlmforge command line. `args[0]` is the program name. Reports
/// go to `out`; failures print one line "smlmforge: error: <code>: <text>"
/// to `err`. Subcommands: simulate, calibrate, localize, evaluate, render, frc.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace smlm
