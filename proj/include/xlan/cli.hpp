#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xlan {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs the command line `args` (program name excluded). Usage and
// configuration errors return kExitUsage, other failures kExitFailure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xlan
