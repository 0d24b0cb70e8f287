#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bdsl::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

/// Runs one `bdsl` invocation; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bdsl::cli
