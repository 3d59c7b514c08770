#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ovw::cli {

enum ExitCode : int { kExitOk = 0, kExitVerificationFailed = 1, kExitUsage = 2 };

// Runs the ovw command line. args[0] is the program name. Normal output goes
// to `out`, diagnostics to `err`; nothing here calls std::exit.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ovw::cli
