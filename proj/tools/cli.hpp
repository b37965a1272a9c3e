#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace exposura::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

/// Runs one invocation; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace exposura::cli
