#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sqtag::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;  // bad flags, unreadable or malformed input
inline constexpr int kNonFiniteLoss = 2;
inline constexpr int kSelfCheckFailed = 3;

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sqtag::cli
