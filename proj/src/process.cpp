#include "mtpeft/process.hpp"

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "mtpeft/error.hpp"

namespace mtpeft {

namespace {

pid_t spawn(const ProcessSpec& spec) {
  if (spec.argv.empty()) throw ValueError("run_processes: empty argv");
  std::vector<char*> argv;
  for (const auto& a : spec.argv) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  const pid_t pid = fork();
  if (pid < 0) throw Error("fork failed");
  if (pid == 0) {
    if (!spec.log_path.empty()) {
      const int fd = open(spec.log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
      if (fd < 0) _exit(127);
      dup2(fd, STDOUT_FILENO);
      dup2(fd, STDERR_FILENO);
      close(fd);
    }
    execv(argv[0], argv.data());
    _exit(127);
  }
  return pid;
}

int decode(int status) {
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return 1;
}

}  // namespace

std::vector<int> run_processes(const std::vector<ProcessSpec>& specs, int jobs) {
  jobs = std::max(jobs, 1);
  std::vector<int> codes(specs.size(), -1);
  std::map<pid_t, std::size_t> running;
  std::size_t next = 0;
  while (next < specs.size() || !running.empty()) {
    while (next < specs.size() && static_cast<int>(running.size()) < jobs) {
      running[spawn(specs[next])] = next;
      ++next;
    }
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) throw Error("waitpid failed");
    const auto it = running.find(pid);
    if (it == running.end()) continue;
    codes[it->second] = decode(status);
    running.erase(it);
  }
  return codes;
}

std::string self_executable() {
  std::error_code ec;
  auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (ec) throw Error("cannot resolve /proc/self/exe: " + ec.message());
  return p.string();
}

}  // namespace mtpeft
