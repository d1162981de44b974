#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lrc {

/// Process exit codes of the `lrc` executable. Argument errors count as
/// configuration errors; kExitFailure covers anything unexpected (I/O).
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitGeneration = 3,
  kExitDataMismatch = 4,
  kExitDiverged = 5,
};

/// Runs the command line `args` (without the program name). Normal output goes
/// to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lrc
