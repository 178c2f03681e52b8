#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lipcde::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kIoError = 3,
  kNumericalError = 4,
};

/// Runs `lipcde <args...>` in-process (args excludes the program name).
/// Diagnostics go to `err` as single lines; progress to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Number of parallel jobs allowed by LIPCDE_THREADS (default 1).
int thread_budget();

}  // namespace lipcde::cli
