#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace envae {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Runs one command line (args exclude the program name). Reports go to
// files; progress and errors to the given streams.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace envae
