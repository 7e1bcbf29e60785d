#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace vcl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Parses argv (argv[0] is the program name) and runs one subcommand. Results
// go to `out` unless --out names a file; diagnostics go to `err`.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace vcl::cli
