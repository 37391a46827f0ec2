#pragma once

// Concrete transports for JsonLineBackend: a child process spoken to over its
// stdin/stdout (POSIX), and an HTTP endpoint that takes one JSON body per POST.

#include <csignal>
#include <cstdio>
#include <memory>
#include <string>
#include <string_view>

#include <fcntl.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "httplib.h"
#include "soe/backend.hpp"
#include "soe/error.hpp"

namespace soe {

/// Runs `/bin/sh -c command` once and exchanges newline-terminated lines.
class ProcessTransport : public Transport {
 public:
  explicit ProcessTransport(const std::string& command) {
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2];
    int from_child[2];
    if (pipe2(to_child, O_CLOEXEC) != 0 || pipe2(from_child, O_CLOEXEC) != 0) fail(ErrorCode::BackendError, "pipe() failed");
    pid_ = fork();
    if (pid_ < 0) fail(ErrorCode::BackendError, "fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    in_ = fdopen(to_child[1], "w");
    out_ = fdopen(from_child[0], "r");
    if (!in_ || !out_) fail(ErrorCode::BackendError, "fdopen() failed");
  }

  ProcessTransport(const ProcessTransport&) = delete;
  ProcessTransport& operator=(const ProcessTransport&) = delete;

  ~ProcessTransport() override {
    if (in_) std::fclose(in_);
    if (out_) std::fclose(out_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  std::string exchange(const std::string& line) override {
    if (std::fputs(line.c_str(), in_) < 0 || std::fputc('\n', in_) == EOF || std::fflush(in_) != 0)
      fail(ErrorCode::BackendError, "backend process closed its input");
    std::string reply;
    for (int c = std::fgetc(out_); c != EOF && c != '\n'; c = std::fgetc(out_)) reply += static_cast<char>(c);
    if (reply.empty()) fail(ErrorCode::BackendError, "backend process closed its output");
    return reply;
  }

 private:
  pid_t pid_ = -1;
  FILE* in_ = nullptr;
  FILE* out_ = nullptr;
};

/// POSTs each request to `url` (http://host:port/path) with a JSON body.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(const std::string& url) {
    const std::string_view scheme = "http://";
    require(url.rfind(scheme, 0) == 0, ErrorCode::InvalidInput, "backend URL must start with http://");
    const std::string rest = url.substr(scheme.size());
    const std::size_t slash = rest.find('/');
    host_ = rest.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : rest.substr(slash);
    client_ = std::make_unique<httplib::Client>("http://" + host_);
    client_->set_read_timeout(600, 0);
  }

  std::string exchange(const std::string& line) override {
    auto res = client_->Post(path_, line, "application/json");
    if (!res) fail(ErrorCode::BackendError, "HTTP request to " + host_ + path_ + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) fail(ErrorCode::BackendError, "HTTP status " + std::to_string(res->status));
    std::string body = res->body;
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
    return body;
  }

 private:
  std::string host_;
  std::string path_;
  std::unique_ptr<httplib::Client> client_;
};

/// "http://..." selects HTTP; anything else is a shell command.
inline std::unique_ptr<GenerationBackend> connect_backend(const std::string& target) {
  if (target.rfind("http://", 0) == 0) return std::make_unique<JsonLineBackend>(std::make_unique<HttpTransport>(target));
  return std::make_unique<JsonLineBackend>(std::make_unique<ProcessTransport>(target));
}

}  // namespace soe
