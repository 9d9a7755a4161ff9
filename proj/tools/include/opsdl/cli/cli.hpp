#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace opsdl::cli {

// Process exit codes. Codes 2-4 come from the library error hierarchy.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitGate = 5;  // pretrain gate or a diagnostic check failed

// Runs one subcommand. `args` excludes the program name. Errors are reported
// on `err` as a single JSON line and mapped to the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace opsdl::cli
