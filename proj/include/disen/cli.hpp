#pragma once

#include <string>
#include <vector>

namespace disen {

/// Entry point behind the `disen` binary. Exposed as a function so tests can
/// drive whole commands in-process. Returns the process exit code.
int run_cli(int argc, const char* const* argv);

/// Convenience overload: `args` excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace disen
