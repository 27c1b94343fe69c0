#pragma once

#include <string>
#include <vector>

namespace flowplan::cli {

// Exit codes: 0 success, 1 validation error, 2 runtime failure.
inline constexpr int kOk = 0;
inline constexpr int kValidation = 1;
inline constexpr int kRuntime = 2;

// args[0] is the program name.
int run(const std::vector<std::string>& args);

}  // namespace flowplan::cli
