#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace omm {

/// Exit codes of the command line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Runs `omm <subcommand> ...`; argv[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace omm
