#pragma once

// Shared fixtures for the unit tests.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "campus/campus.hpp"

namespace campus::test {

inline InstructionSample make_sample(std::string instruction, std::string output, std::string source = "s",
                                     std::string input = "") {
  InstructionSample s;
  s.instruction = std::move(instruction);
  s.input = std::move(input);
  s.output = std::move(output);
  s.source = std::move(source);
  return s;
}

inline Dataset make_dataset(std::vector<InstructionSample> samples) {
  Dataset ds;
  for (auto& s : samples) {
    s.id = ds.samples.size();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Dataset parse_string(const std::string& jsonl, const std::string& source = "default") {
  std::istringstream in(jsonl);
  return parse_dataset(in, source, "<test>");
}

/// Per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("campus_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

/// Runs a shell command; returns the exit status.
inline int shell(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

/// In-process transport answering requests with a local probe.
class LoopbackTransport : public LineTransport {
 public:
  explicit LoopbackTransport(Probe& probe) : probe_(probe) {}

  void write_line(std::string_view line) override {
    bool done = false;
    pending_ = handle_probe_request(probe_, std::string(line), done).dump();
  }
  std::string read_line(std::chrono::milliseconds) override { return pending_; }

 private:
  Probe& probe_;
  std::string pending_;
};

/// Transport replaying canned responses.
class ScriptedTransport : public LineTransport {
 public:
  explicit ScriptedTransport(std::vector<std::string> replies) : replies_(std::move(replies)) {}

  void write_line(std::string_view line) override { sent.emplace_back(line); }
  std::string read_line(std::chrono::milliseconds) override {
    if (next_ >= replies_.size()) throw ProbeTimeoutError("script exhausted");
    return replies_[next_++];
  }

  std::vector<std::string> sent;

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
};

}  // namespace campus::test
