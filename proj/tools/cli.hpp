#pragma once

#include <string>
#include <vector>

namespace csd::cli {

/// Runs one command line (argv[0] is the program name). Returns the process
/// exit code: 0 success, 1 usage/config/data error, 2 numerical or budget
/// failure. Messages go to stderr.
int run(const std::vector<std::string>& args);

}  // namespace csd::cli
