#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sslface {

/// Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure.
enum ExitCode { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumeric = 4 };

/// Runs the `sslface` command line; args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// 10914 -> "10,914".
std::string with_thousands(long value);

}  // namespace sslface
