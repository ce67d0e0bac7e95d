#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace coar::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kNumerical = 3 };

/// Runs one command line (args[0] is the program name). Output and
/// diagnostics go to the given streams so tests can drive it in-process.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// COAR_ZSL_THREADS, default 1.
int thread_count_from_env();

}  // namespace coar::cli
