#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pct::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kDataError = 3, kRuntimeError = 4 };

/// Entry point of the `pct` tool; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pct::cli
