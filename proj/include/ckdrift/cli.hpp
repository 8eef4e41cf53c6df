#pragma once

// Command-line front end: diff, heatmap, aggregate, sample, format, eval.
//
// Exit codes: 0 success, 1 usage error (nothing written), 2 data error
// (outputs of the failed command removed). Logs go to the error stream as
// key=value lines.

#include <iosfwd>
#include <string>
#include <vector>

namespace ckdrift::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// `args` includes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace ckdrift::cli
