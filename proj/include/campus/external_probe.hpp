#pragma once

// JSON-lines probe protocol: a client probe forwarding calls to an external
// process or TCP endpoint, and a server loop exposing any Probe.

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "campus/error.hpp"
#include "campus/probe.hpp"

namespace campus {

/// One JSON line out, one JSON line back.
class LineTransport {
 public:
  virtual ~LineTransport() = default;
  virtual void write_line(std::string_view line) = 0;
  virtual std::string read_line(std::chrono::milliseconds timeout) = 0;
};

/// Line transport over a connected stream socket.
class SocketTransport : public LineTransport {
 public:
  explicit SocketTransport(int fd, pid_t child = -1) : fd_(fd), child_(child) {}
  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  ~SocketTransport() override {
    if (fd_ >= 0) ::close(fd_);
    if (child_ > 0) {
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(child_, &status, WNOHANG) != 0) return;
        ::usleep(10000);
      }
      ::kill(-child_, SIGTERM);
      ::waitpid(child_, &status, 0);
    }
  }

  /// Spawns `/bin/sh -c command` with its stdin/stdout bound to a socketpair,
  /// in a new process group.
  static std::unique_ptr<SocketTransport> spawn(const std::string& command) {
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
      throw ProbeConnectError(std::string("socketpair: ") + std::strerror(errno));
    const pid_t pid = ::fork();
    if (pid < 0) {
      ::close(sv[0]);
      ::close(sv[1]);
      throw ProbeConnectError(std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
      ::setpgid(0, 0);  // own group, so teardown reaches grandchildren too
      ::dup2(sv[1], STDIN_FILENO);
      ::dup2(sv[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::setpgid(pid, pid);  // also here, in case the child has not run yet
    ::close(sv[1]);
    return std::make_unique<SocketTransport>(sv[0], pid);
  }

  static std::unique_ptr<SocketTransport> connect_tcp(const std::string& host, const std::string& port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
      throw ProbeConnectError("resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
    int fd = -1;
    for (auto* ai = res; ai; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw ProbeConnectError("cannot connect to " + host + ":" + port);
    return std::make_unique<SocketTransport>(fd);
  }

  void write_line(std::string_view line) override {
    std::string buf(line);
    buf += '\n';
    std::size_t sent = 0;
    while (sent < buf.size()) {
      const ssize_t n = ::send(fd_, buf.data() + sent, buf.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProbeProtocolError(std::string("write failed: ") + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw ProbeTimeoutError("timed out waiting for probe response");
      pollfd p{fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw ProbeProtocolError(std::string("poll: ") + std::strerror(errno));
      }
      if (rc == 0) continue;
      char chunk[65536];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProbeProtocolError(std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) throw ProbeProtocolError("probe closed the connection");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  pid_t child_;
  std::string buffer_;
};

/// Probe whose calls are forwarded over the JSON-lines protocol. Every
/// request line is kept in `transcript()` for replay and conformance checks.
class ExternalProbe final : public Probe {
 public:
  explicit ExternalProbe(std::unique_ptr<LineTransport> transport,
                         std::chrono::milliseconds timeout = std::chrono::seconds(60))
      : transport_(std::move(transport)), timeout_(timeout) {
    nlohmann::json reply;
    try {
      reply = call({{"op", "hello"}});
    } catch (const ProbeError& e) {
      throw ProbeHandshakeError(std::string("handshake failed: ") + e.what());
    }
    if (!reply.contains("feature_dim") || !reply["feature_dim"].is_number_integer() ||
        reply["feature_dim"].get<long long>() < 1)
      throw ProbeHandshakeError("handshake reply lacks a positive feature_dim");
    feature_dim_ = reply["feature_dim"].get<std::size_t>();
  }

  /// Parses `exec:<command>` or `tcp:<host>:<port>`.
  static std::unique_ptr<ExternalProbe> connect(const std::string& endpoint,
                                                std::chrono::milliseconds timeout = std::chrono::seconds(60)) {
    if (endpoint.rfind("exec:", 0) == 0)
      return std::make_unique<ExternalProbe>(SocketTransport::spawn(endpoint.substr(5)), timeout);
    if (endpoint.rfind("tcp:", 0) == 0) {
      const std::string hp = endpoint.substr(4);
      const auto colon = hp.rfind(':');
      if (colon == std::string::npos) throw ProbeConnectError("tcp endpoint needs host:port");
      return std::make_unique<ExternalProbe>(
          SocketTransport::connect_tcp(hp.substr(0, colon), hp.substr(colon + 1)), timeout);
    }
    throw ProbeConnectError("unknown probe endpoint '" + endpoint + "'");
  }

  ~ExternalProbe() override {
    if (!closed_) {
      try {
        shutdown();
      } catch (...) {
      }
    }
  }

  std::size_t feature_dim() const override { return feature_dim_; }

  std::vector<double> logprobs(TokenView tokens) override {
    auto reply = call({{"op", "logprobs"},
                       {"tokens", std::vector<TokenId>(tokens.begin(), tokens.end())},
                       {"mask_from", 0}});
    auto lp = number_array(reply, "logprobs");
    if (lp.size() != tokens.size())
      throw ProbeProtocolError("logprobs length " + std::to_string(lp.size()) + " != " +
                               std::to_string(tokens.size()));
    for (double v : lp)
      if (v > 0.0) throw ProbeProtocolError("positive log-probability in response");
    return lp;
  }

  void update(std::span<const TokenView> batch) override {
    auto samples = nlohmann::ordered_json::array();
    for (auto s : batch) samples.push_back(std::vector<TokenId>(s.begin(), s.end()));
    call({{"op", "update"}, {"samples", std::move(samples)}});
  }

  FeaturePair features(const EncodedSample& sample) override {
    auto reply = call({{"op", "features"}, {"tokens", sample.tokens}});
    FeaturePair f{number_array(reply, "z1"), number_array(reply, "z2")};
    if (f.initial.size() != feature_dim_ || f.current.size() != feature_dim_)
      throw ProbeProtocolError("feature vector length differs from handshake feature_dim");
    return f;
  }

  void snapshot() override { call({{"op", "snapshot"}}); }

  void shutdown() {
    if (closed_) return;
    closed_ = true;
    call({{"op", "shutdown"}});
  }

  const std::vector<std::string>& transcript() const { return transcript_; }

 private:
  nlohmann::json call(const nlohmann::ordered_json& request) {
    const std::string line = request.dump();
    transcript_.push_back(line);
    transport_->write_line(line);
    const std::string response = transport_->read_line(timeout_);
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(response);
    } catch (const nlohmann::json::parse_error&) {
      throw ProbeProtocolError("malformed response line: " + response);
    }
    if (!reply.is_object() || !reply.contains("ok") || !reply["ok"].is_boolean())
      throw ProbeProtocolError("response lacks boolean 'ok': " + response);
    if (!reply["ok"].get<bool>()) {
      const auto msg = reply.contains("error") && reply["error"].is_string()
                           ? reply["error"].get<std::string>()
                           : std::string("unspecified error");
      throw ProbeRemoteError("probe error: " + msg);
    }
    return reply;
  }

  static std::vector<double> number_array(const nlohmann::json& reply, const char* key) {
    if (!reply.contains(key) || !reply[key].is_array())
      throw ProbeProtocolError(std::string("response lacks array '") + key + "'");
    std::vector<double> out;
    out.reserve(reply[key].size());
    for (const auto& v : reply[key]) {
      if (!v.is_number()) throw ProbeProtocolError(std::string("non-numeric entry in '") + key + "'");
      const double d = v.get<double>();
      if (!std::isfinite(d)) throw ProbeProtocolError(std::string("non-finite entry in '") + key + "'");
      out.push_back(d);
    }
    return out;
  }

  std::unique_ptr<LineTransport> transport_;
  std::chrono::milliseconds timeout_;
  std::size_t feature_dim_ = 0;
  bool closed_ = false;
  std::vector<std::string> transcript_;
};

namespace detail {

inline std::vector<TokenId> token_array(const nlohmann::json& j) {
  if (!j.is_array()) throw ProbeProtocolError("expected an array of token ids");
  std::vector<TokenId> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ProbeProtocolError("token ids must be non-negative integers");
    out.push_back(v.get<TokenId>());
  }
  return out;
}

}  // namespace detail

/// Answers one request against `probe`. Sets `done` on shutdown. Errors are
/// reported in-band as {"ok":false,"error":...}.
inline nlohmann::json handle_probe_request(Probe& probe, const std::string& line, bool& done) {
  try {
    const auto req = nlohmann::json::parse(line);
    const std::string op = req.at("op").get<std::string>();
    if (op == "hello") return {{"ok", true}, {"feature_dim", probe.feature_dim()}};
    if (op == "logprobs") {
      const auto tokens = detail::token_array(req.at("tokens"));
      const std::size_t from = req.value("mask_from", std::size_t{0});
      auto lp = probe.logprobs(tokens);
      if (from > lp.size()) throw ProbeProtocolError("mask_from beyond sequence end");
      lp.erase(lp.begin(), lp.begin() + static_cast<std::ptrdiff_t>(from));
      return {{"ok", true}, {"logprobs", lp}};
    }
    if (op == "update") {
      std::vector<std::vector<TokenId>> samples;
      for (const auto& s : req.at("samples")) samples.push_back(detail::token_array(s));
      std::vector<TokenView> views(samples.begin(), samples.end());
      probe.update(views);
      return {{"ok", true}};
    }
    if (op == "features") {
      EncodedSample sample;
      sample.tokens = detail::token_array(req.at("tokens"));
      sample.roles.assign(sample.tokens.size(), TokenRole::target);
      auto f = probe.features(sample);
      return {{"ok", true}, {"z1", f.initial}, {"z2", f.current}};
    }
    if (op == "snapshot") {
      probe.snapshot();
      return {{"ok", true}};
    }
    if (op == "shutdown") {
      done = true;
      return {{"ok", true}};
    }
    return {{"ok", false}, {"error", "unknown op '" + op + "'"}};
  } catch (const std::exception& e) {
    return {{"ok", false}, {"error", e.what()}};
  }
}

/// Serves the protocol over a line stream until shutdown or EOF.
inline void serve_probe(Probe& probe, std::istream& in, std::ostream& out) {
  std::string line;
  bool done = false;
  while (!done && std::getline(in, line)) {
    if (line.empty()) continue;
    out << handle_probe_request(probe, line, done).dump() << '\n' << std::flush;
  }
}

}  // namespace campus
