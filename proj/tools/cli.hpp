#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace seal2real::cli {

inline constexpr int kOk = 0;
inline constexpr int kRuntimeFailure = 1;
inline constexpr int kUsageError = 2;

/// Runs one subcommand. `args` excludes the program name. Diagnostics go to
/// `err`, normal output to `out`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace seal2real::cli
