#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace palm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;      ///< bad flags, bad files, contract violations
inline constexpr int kExitNumerical = 3;  ///< numerical failure during training or scoring

/// Runs one `palm <command> ...` invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace palm::cli
