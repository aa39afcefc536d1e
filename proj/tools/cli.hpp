#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace splitwire::cli {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitComputation = 3;
inline constexpr int kExitTransport = 4;

/// Runs the `splitwire` command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace splitwire::cli
