#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

// Text-generation interface behind the agent loop: a live client for any
// chat-completions-compatible HTTP service, and a deterministic scripted
// mock for tests and golden replays. generate() must be safe under
// concurrent in-flight calls; implementations keep per-call state only.

namespace memsearch {

enum class Role { System, User, Assistant, Tool };

inline const char* to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Tool: return "tool";
  }
  return "user";
}

struct Message {
  Role role = Role::User;
  std::string content;
};

struct GenRequest {
  std::vector<Message> messages;  // non-empty
  double temperature = 1.0;       // >= 0; rollout sampling default
  int max_new_tokens = 1024;
  std::vector<std::string> stop;
  std::optional<std::int64_t> seed;  // per-episode derived seed, when sampling
};

enum class Phase { Act, Memory };

inline const char* to_string(Phase phase) {
  return phase == Phase::Act ? "act" : "memory";
}

inline Phase phase_from_string(std::string_view s) {
  if (s == "act") return Phase::Act;
  if (s == "memory") return Phase::Memory;
  throw std::invalid_argument("unknown phase: " + std::string(s));
}

// Episode coordinates for the call: which question, which turn (1-based),
// acting or memory-update phase. The scripted mock keys on these; the HTTP
// client ignores them.
struct GenMeta {
  std::string question;
  int turn = 1;
  Phase phase = Phase::Act;
};

class TransportError : public std::runtime_error {
 public:
  TransportError(int status, const std::string& what)
      : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }  // 0 for connection-level failures

 private:
  int status_;
};

class ScriptGapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string generate(const GenRequest& request, const GenMeta& meta) = 0;
};

struct ScriptEntry {
  std::string question;
  int turn = 1;
  Phase phase = Phase::Act;
  std::string output;
};

// Replays canned outputs keyed by (question, turn, phase). Bit-deterministic:
// identical script + request -> identical bytes. Stop sequences truncate at
// the end of the earliest marker so tag pairs stay closed.
class ScriptedBackend : public Backend {
 public:
  ScriptedBackend() = default;

  explicit ScriptedBackend(const std::vector<ScriptEntry>& entries) {
    for (const auto& e : entries) add_entry(e);
  }

  // JSONL: {"question": ..., "turn": n, "phase": "act"|"memory", "output": ...}
  static ScriptedBackend from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open script file: " + path);
    ScriptedBackend backend;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed script line");
      }
      ScriptEntry e;
      e.question = j.at("question").get<std::string>();
      e.turn = j.at("turn").get<int>();
      std::string phase = j.at("phase").get<std::string>();
      if (phase != "act" && phase != "memory") {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad phase '" + phase + "'");
      }
      e.phase = phase == "act" ? Phase::Act : Phase::Memory;
      e.output = j.at("output").get<std::string>();
      backend.add_entry(e, path + ":" + std::to_string(lineno));
    }
    return backend;
  }

  void add_entry(const ScriptEntry& e, const std::string& where = "") {
    Key key{e.question, e.turn, e.phase == Phase::Act ? 0 : 1};
    if (!entries_.emplace(key, e.output).second) {
      throw std::runtime_error((where.empty() ? std::string("script") : where) +
                               ": duplicate script key (question, turn, phase)");
    }
  }

  std::string generate(const GenRequest& request, const GenMeta& meta) override {
    Key key{meta.question, meta.turn, meta.phase == Phase::Act ? 0 : 1};
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      throw ScriptGapError("no script entry for question '" + meta.question + "', turn " +
                           std::to_string(meta.turn) + ", phase " + to_string(meta.phase));
    }
    return apply_stop(it->second, request.stop);
  }

  std::size_t size() const { return entries_.size(); }

 private:
  using Key = std::tuple<std::string, int, int>;

  static std::string apply_stop(const std::string& text, const std::vector<std::string>& stops) {
    std::size_t cut = std::string::npos;
    for (const auto& stop : stops) {
      if (stop.empty()) continue;
      std::size_t pos = text.find(stop);
      if (pos != std::string::npos) cut = std::min(cut, pos + stop.size());
    }
    return cut == std::string::npos ? text : text.substr(0, cut);
  }

  std::map<Key, std::string> entries_;
};

}  // namespace memsearch
