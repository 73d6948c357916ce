// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Line-oriented step protocol between the engine and a logit backend.
//
//   engine -> backend   {"cmd":"reset","prompt":[1,2,3]}
//                       {"cmd":"step","feed":17}
//                       {"cmd":"close"}
//   backend -> engine   {"topk":[[17,-0.2],[4,-1.9]],"eos":false}
//                       {"error":"..."}
//
// reset and step each get exactly one reply, carrying the distribution of the
// next position; close gets none.

#include <csignal>
#include <cstdio>
#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "resdec/errors.hpp"
#include "resdec/history.hpp"
#include "resdec/math.hpp"
#include "resdec/source.hpp"

namespace resdec {

class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void send(const std::string& line) = 0;
  /// nullopt at end of stream.
  virtual std::optional<std::string> receive() = 0;
};

/// Channel over a pair of C++ streams (tests, in-process transcripts).
class StreamChannel final : public LineChannel {
 public:
  StreamChannel(std::istream& in, std::ostream& out) : in_(in), out_(out) {}
  void send(const std::string& line) override {
    out_ << line << '\n';
    out_.flush();
  }
  std::optional<std::string> receive() override {
    std::string line;
    if (!std::getline(in_, line)) return std::nullopt;
    return line;
  }

 private:
  std::istream& in_;
  std::ostream& out_;
};

/// Spawns `/bin/sh -c command` and talks to its stdin/stdout.
///
/// SIGPIPE is ignored process-wide on first use so that a dead backend
/// surfaces as a BackendError instead of killing the engine.
class ProcessChannel final : public LineChannel {
 public:
  explicit ProcessChannel(const std::string& command) {
    static std::once_flag ignore_sigpipe;
    std::call_once(ignore_sigpipe, [] { std::signal(SIGPIPE, SIG_IGN); });
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0) throw BackendError("pipe() failed");
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw BackendError("pipe() failed");
    }
    pid_ = fork();
    if (pid_ < 0) throw BackendError("fork() failed");
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
    write_fd_ = to_child[1];
    read_ = fdopen(from_child[0], "r");
    if (read_ == nullptr) throw BackendError("fdopen() failed");
  }

  ProcessChannel(const ProcessChannel&) = delete;
  ProcessChannel& operator=(const ProcessChannel&) = delete;

  ~ProcessChannel() override {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_ != nullptr) std::fclose(read_);
    if (pid_ > 0) waitpid(pid_, nullptr, 0);
  }

  void send(const std::string& line) override {
    const std::string data = line + '\n';
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
      if (n <= 0) throw BackendError("backend closed its input");
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> receive() override {
    std::string line;
    int c;
    while ((c = std::fgetc(read_)) != EOF) {
      if (c == '\n') return line;
      line.push_back(static_cast<char>(c));
    }
    if (line.empty()) return std::nullopt;
    return line;
  }

  /// Closes the backend's stdin and waits for it; returns its exit status.
  int finish() {
    if (write_fd_ >= 0) {
      close(write_fd_);
      write_fd_ = -1;
    }
    int status = 0;
    if (pid_ > 0) {
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  std::FILE* read_ = nullptr;
};

namespace protocol {

using json = nlohmann::ordered_json;

inline std::string encode_reset(const std::vector<TokenId>& prompt) {
  json j;
  j["cmd"] = "reset";
  j["prompt"] = prompt;
  return j.dump();
}

inline std::string encode_step(TokenId feed) {
  json j;
  j["cmd"] = "step";
  j["feed"] = feed;
  return j.dump();
}

inline std::string encode_close() { return R"({"cmd":"close"})"; }

struct Reply {
  std::vector<TokenLogit> topk;
  bool eos = false;
};

/// Parses a backend reply; `{"error":...}` and malformed replies throw BackendError.
inline Reply parse_reply(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error&) {
    throw BackendError("malformed reply: " + line);
  }
  if (!j.is_object()) throw BackendError("reply is not an object");
  if (j.contains("error")) {
    throw BackendError("backend error: " + (j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump()));
  }
  if (!j.contains("topk") || !j["topk"].is_array()) throw BackendError("reply lacks 'topk'");
  Reply r;
  for (const auto& pair : j["topk"]) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() || !pair[1].is_number()) {
      throw BackendError("'topk' entries must be [token_id, logprob]");
    }
    r.topk.push_back({pair[0].get<TokenId>(), pair[1].get<double>()});
  }
  if (j.contains("eos")) {
    if (!j["eos"].is_boolean()) throw BackendError("'eos' must be a boolean");
    r.eos = j["eos"].get<bool>();
  }
  if (r.topk.empty() && !r.eos) throw BackendError("empty 'topk'");
  return r;
}

inline std::string encode_reply(const std::vector<TokenLogit>& topk, bool eos) {
  json arr = json::array();
  for (const auto& e : topk) arr.push_back(json::array({e.token, e.logit}));
  json j;
  j["topk"] = std::move(arr);
  j["eos"] = eos;
  return j.dump();
}

inline std::string encode_error(const std::string& message) {
  json j;
  j["error"] = message;
  return j.dump();
}

}  // namespace protocol

/// Logit source backed by a step-protocol peer. The backend returns only its
/// top-M tokens, so logits are carried over that explicit domain.
class StdioBackendSource final : public LogitSource {
 public:
  StdioBackendSource(LineChannel& channel, std::vector<TokenId> prompt) : channel_(channel), prompt_(std::move(prompt)) {}

  std::vector<StepRecord> begin() override {
    channel_.send(protocol::encode_reset(prompt_));
    pending_ = read_reply();
    return {};
  }

  std::optional<SourceOutput> next(std::optional<TokenId> previous) override {
    if (!pending_) {
      if (!previous) throw BackendError("step without a fed token");
      channel_.send(protocol::encode_step(*previous));
      pending_ = read_reply();
    }
    protocol::Reply r = std::move(*pending_);
    pending_.reset();
    if (r.eos && r.topk.empty()) return SourceOutput{LogitVector::dense({0.0}), true};
    std::vector<TokenId> ids;
    std::vector<double> scores;
    for (const auto& e : r.topk) {
      ids.push_back(e.token);
      scores.push_back(e.logit);
    }
    try {
      return SourceOutput{LogitVector::over(std::move(ids), std::move(scores)), r.eos};
    } catch (const Error& e) {
      throw BackendError(std::string("invalid reply: ") + e.what());
    }
  }

  void close() { channel_.send(protocol::encode_close()); }

 private:
  protocol::Reply read_reply() {
    auto line = channel_.receive();
    if (!line) throw BackendError("backend closed the stream");
    return protocol::parse_reply(*line);
  }

  LineChannel& channel_;
  std::vector<TokenId> prompt_;
  std::optional<protocol::Reply> pending_;
};

/// Reference backend: serves a transition table over the step protocol until
/// `close` or end of input. Protocol violations get an error reply and the
/// loop continues. Returns the number of requests served.
inline std::size_t serve_markov(const TransitionTable& table, std::size_t top_m, std::istream& in, std::ostream& out) {
  table.validate();
  using protocol::json;
  std::optional<TokenId> last;
  std::size_t served = 0;
  const auto reply_for = [&](TokenId tok) {
    const LogitVector norm = log_softmax(table.logits_after(tok));
    const StepRecord rec = truncate_to_record(1, Origin::generated, norm, top_m);
    const bool eos = table.eos && tok == *table.eos;
    return protocol::encode_reply(rec.entries, eos);
  };
  const auto valid = [&](const json& t) {
    return t.is_number_integer() && t.get<long long>() >= 0 &&
           static_cast<std::size_t>(t.get<long long>()) < table.vocab_size();
  };
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++served;
    json req;
    try {
      req = json::parse(line);
    } catch (const json::parse_error&) {
      out << protocol::encode_error("malformed request") << '\n' << std::flush;
      continue;
    }
    const std::string cmd = req.is_object() && req.contains("cmd") && req["cmd"].is_string() ? req["cmd"].get<std::string>() : "";
    if (cmd == "close") break;
    if (cmd == "reset") {
      if (!req.contains("prompt") || !req["prompt"].is_array() || req["prompt"].empty()) {
        out << protocol::encode_error("reset needs a non-empty prompt") << '\n' << std::flush;
        continue;
      }
      bool ok = true;
      for (const auto& t : req["prompt"]) ok = ok && valid(t);
      if (!ok) {
        out << protocol::encode_error("prompt token outside the vocabulary") << '\n' << std::flush;
        continue;
      }
      last = req["prompt"].back().get<TokenId>();
      out << reply_for(*last) << '\n' << std::flush;
    } else if (cmd == "step") {
      if (!last) {
        out << protocol::encode_error("step before reset") << '\n' << std::flush;
      } else if (!req.contains("feed") || !valid(req["feed"])) {
        out << protocol::encode_error("step needs a valid 'feed' token") << '\n' << std::flush;
      } else {
        last = req["feed"].get<TokenId>();
        out << reply_for(*last) << '\n' << std::flush;
      }
    } else {
      out << protocol::encode_error("unknown command") << '\n' << std::flush;
    }
  }
  return served;
}

}  // namespace resdec
