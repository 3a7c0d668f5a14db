#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace teleqa::process {

struct Result {
  int exit_code = 0;  // 128 + signal number when killed by a signal
  std::string out;    // captured standard output, when requested
};

// Runs argv[0] (searched on PATH) without a shell; the environment passes through.
// Throws Errc::external when the program cannot be started.
Result run(const std::vector<std::string>& argv, bool capture_stdout = false);

// Whitespace split honouring single and double quotes and backslash escapes.
std::vector<std::string> split_command(std::string_view command);

}  // namespace teleqa::process
