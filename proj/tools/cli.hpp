#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dfop::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericAbort = 3 };

// Runs one `dfop` command. `args` excludes the program name. Diagnostics go to
// `err` as a single line; progress goes to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dfop::cli
