#pragma once

#include <string>
#include <vector>

namespace mtpeft {

struct ProcessSpec {
  std::vector<std::string> argv;  // argv[0] is the executable path
  std::string log_path;           // stdout and stderr; empty inherits
};

// Runs every spec as a child process, at most `jobs` at a time, and returns
// the exit codes in input order (128 + signal for signalled children, 127
// when exec fails).
std::vector<int> run_processes(const std::vector<ProcessSpec>& specs, int jobs);

// Absolute path of the running executable.
std::string self_executable();

}  // namespace mtpeft
