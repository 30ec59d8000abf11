#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ciso::cli {

inline constexpr const char* kVersion = "0.1.0";

// Runs one subcommand. `args` excludes the program name. Returns the process
// exit status; outputs are written only when the command succeeds.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string usage();

}  // namespace ciso::cli
