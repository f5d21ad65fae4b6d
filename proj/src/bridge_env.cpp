#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "seqopt/environments.hpp"

namespace seqopt {

namespace {

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

}  // namespace

BridgeEnv::BridgeEnv(BridgeSpec spec) : spec_(std::move(spec)) {
  if (spec_.command.empty()) throw ConfigError("bridge: empty command line");
  if (spec_.vocab_size < 2 || spec_.prompt_length < 1) throw ConfigError("bridge: vocab_size and prompt_length required");
  if (spec_.timeout.count() <= 0) throw ConfigError("bridge: timeout must be positive");

  // A dead child must surface as EPIPE on write, not kill this process.
  std::signal(SIGPIPE, SIG_IGN);

  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw EnvironmentError("bridge: pipe failed");
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw EnvironmentError("bridge: pipe failed");
  }
  std::vector<char*> argv;
  for (auto& a : spec_.command) argv.push_back(a.data());
  argv.push_back(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw EnvironmentError("bridge: fork failed");
  }
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execvp(argv[0], argv.data());
    ::_exit(127);
  }
  pid_ = pid;
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

BridgeEnv::~BridgeEnv() { shutdown(); }

void BridgeEnv::shutdown() {
  close_fd(to_child_);
  close_fd(from_child_);
  if (pid_ > 0) {
    int status = 0;
    // Give a well-behaved child a moment to exit on EOF before killing it.
    for (int i = 0; i < 20; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      ::usleep(5000);
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

void BridgeEnv::fail(const std::string& what) {
  broken_ = true;
  shutdown();
  throw EnvironmentError("bridge: " + what);
}

std::string BridgeEnv::format_request(std::uint64_t id, std::span<const Token> tokens) {
  std::string s = "{\"id\":" + std::to_string(id) + ",\"tokens\":[";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(tokens[i]);
  }
  s += "]}\n";
  return s;
}

double BridgeEnv::parse_response(const std::string& line, std::uint64_t expected_id) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw EnvironmentError(std::string("bridge: malformed response line: ") + e.what());
  }
  if (!j.is_object()) throw EnvironmentError("bridge: response is not a JSON object");
  const auto id = j.find("id");
  if (id == j.end() || !id->is_number_unsigned()) throw EnvironmentError("bridge: response lacks an unsigned id");
  if (id->get<std::uint64_t>() != expected_id) {
    throw EnvironmentError("bridge: response id " + std::to_string(id->get<std::uint64_t>()) + " does not match request " +
                           std::to_string(expected_id));
  }
  const auto reward = j.find("reward");
  if (reward == j.end() || !reward->is_number()) throw EnvironmentError("bridge: response lacks a numeric reward");
  const double r = reward->get<double>();
  if (!std::isfinite(r)) throw EnvironmentError("bridge: non-finite reward");
  return r;
}

void BridgeEnv::write_all(const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(to_child_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(std::string("write to child failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string BridgeEnv::read_line() {
  using clock = std::chrono::steady_clock;
  const auto deadline = clock::now() + spec_.timeout;
  for (;;) {
    const auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      std::string line = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now());
    if (left.count() <= 0) fail("timed out after " + std::to_string(spec_.timeout.count()) + " ms");
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      fail("poll failed");
    }
    if (rc == 0) fail("timed out after " + std::to_string(spec_.timeout.count()) + " ms");
    char buf[4096];
    const ssize_t n = ::read(from_child_, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail("read from child failed");
    }
    if (n == 0) fail("child closed its output stream");
    pending_.append(buf, static_cast<std::size_t>(n));
  }
}

double BridgeEnv::evaluate(std::span<const Token> tokens) {
  if (broken_) throw EnvironmentError("bridge: channel unusable after an earlier failure");
  check_sequence(tokens);
  const std::uint64_t id = ++next_id_;
  write_all(format_request(id, tokens));
  const std::string line = read_line();
  try {
    return parse_response(line, id);
  } catch (const EnvironmentError&) {
    broken_ = true;
    shutdown();
    throw;
  }
}

double bridge_evaluate(BridgeEnv& env, std::span<const Token> tokens) { return env.evaluate(tokens); }

}  // namespace seqopt
