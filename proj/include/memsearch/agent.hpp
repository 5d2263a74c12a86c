#pragma once

#include <cstddef>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memsearch/backend.hpp"
#include "memsearch/memory.hpp"
#include "memsearch/prompts.hpp"
#include "memsearch/protocol.hpp"
#include "memsearch/retrieval.hpp"

// Multi-turn episode driver. Two modes share the turn grammar but differ in
// what the acting context contains:
//
//   MemSearcher  per-turn context is question + bounded memory; after each
//                observation a memory-phase generation (same conversation)
//                rewrites the memory, and the next turn starts fresh.
//   ReAct        context accumulates the question plus every prior thought,
//                action and observation; no memory phase.

namespace memsearch {

enum class AgentMode { MemSearcher, ReAct };

inline const char* to_string(AgentMode mode) {
  return mode == AgentMode::MemSearcher ? "memsearcher" : "react";
}

inline AgentMode agent_mode_from_string(std::string_view s) {
  if (s == "memsearcher") return AgentMode::MemSearcher;
  if (s == "react") return AgentMode::ReAct;
  throw std::invalid_argument("unknown agent mode: " + std::string(s));
}

struct EpisodeConfig {
  AgentMode mode = AgentMode::MemSearcher;
  std::size_t max_turns = 8;
  std::size_t memory_budget = 1024;
  std::size_t context_window = 8192;
  std::size_t retrieval_k = 3;
  double temperature = 1.0;
  std::int64_t seed = 0;
  std::string tool_name = "wikipedia_search";
  int max_new_tokens = 1024;

  void validate() const {
    if (max_turns < 1) throw std::invalid_argument("max_turns must be positive");
    if (memory_budget < 1) throw std::invalid_argument("memory_budget must be positive");
    if (retrieval_k < 1) throw std::invalid_argument("retrieval_k must be positive");
    if (max_new_tokens < 1) throw std::invalid_argument("max_new_tokens must be positive");
    if (memory_budget >= context_window)
      throw std::invalid_argument("memory_budget must be smaller than context_window");
  }
};

// One turn's tuple: (q, m_in, thought, action) plus, when the action was a
// search, the observation and the rewritten memory. assistant_text and
// memory_update_text keep the exact generated bytes for training export.
struct Conversation {
  std::string question;
  MemoryState memory_in;
  std::string thought;
  Action action;
  std::optional<std::vector<Passage>> observation;
  std::optional<MemoryState> memory_out;
  std::string assistant_text;
  std::optional<std::string> memory_update_text;
};

enum class TrajectoryStatus { Answered, Truncated, FormatFailed };

inline const char* to_string(TrajectoryStatus status) {
  switch (status) {
    case TrajectoryStatus::Answered: return "answered";
    case TrajectoryStatus::Truncated: return "truncated";
    case TrajectoryStatus::FormatFailed: return "format_failed";
  }
  return "truncated";
}

inline TrajectoryStatus trajectory_status_from_string(std::string_view s) {
  if (s == "answered") return TrajectoryStatus::Answered;
  if (s == "truncated") return TrajectoryStatus::Truncated;
  if (s == "format_failed") return TrajectoryStatus::FormatFailed;
  throw std::invalid_argument("unknown trajectory status: " + std::string(s));
}

struct TrajectoryFailure {
  FormatErrorKind kind = FormatErrorKind::NoAction;
  std::size_t turn = 0;  // 1-based
  Phase phase = Phase::Act;
  std::string detail;
};

struct Trajectory {
  std::string question;
  AgentMode mode = AgentMode::MemSearcher;
  std::vector<Conversation> conversations;
  TrajectoryStatus status = TrajectoryStatus::Truncated;
  std::optional<std::string> final_answer;
  std::vector<std::size_t> per_turn_context_tokens;
  std::optional<TrajectoryFailure> failure;
  std::string prompt_hash;
};

// Observation block handed back to the model. Empty result lists still
// produce a well-formed tool_response so the episode can continue.
inline std::string observation_text(const std::vector<Passage>& passages) {
  if (passages.empty())
    return std::string(kToolResponseOpen) + "\nNo results found.\n" +
           std::string(kToolResponseClose);
  return render_observation(passages);
}

namespace detail {

inline std::size_t context_token_count(const std::vector<Message>& messages,
                                       const TokenCounter& counter) {
  std::size_t total = 0;
  for (const auto& m : messages) total += counter(m.content);
  return total;
}

}  // namespace detail

// Fixed per-turn rendering overhead of the MemSearcher context: the acting
// system prompt plus the question/memory wrapper with both slots empty.
// Every acting context then satisfies
//   tokens(context) <= tokens(question) + memory_budget + template_overhead.
inline std::size_t template_overhead(const EpisodeConfig& config,
                                     const PromptSet& prompts = PromptSet::builtin(),
                                     const TokenCounter& counter = default_token_counter()) {
  return counter(prompts.render_act_system(config.tool_name)) + counter(render_context("", ""));
}

inline Trajectory run_episode(const std::string& question, Backend& backend, const Index& index,
                              const EpisodeConfig& config,
                              const PromptSet& prompts = PromptSet::builtin(),
                              const TokenCounter& counter = default_token_counter()) {
  config.validate();
  if (config.mode != AgentMode::MemSearcher)
    throw std::invalid_argument("run_episode drives MemSearcher mode only");

  Trajectory traj;
  traj.question = question;
  traj.mode = AgentMode::MemSearcher;
  traj.prompt_hash = prompts.hash();

  const std::string act_system = prompts.render_act_system(config.tool_name);
  const std::string memory_instruction = prompts.render_memory_update(config.memory_budget);
  const std::set<std::string> tools{config.tool_name};
  MemoryState memory = MemoryState::empty();

  for (std::size_t turn = 1; turn <= config.max_turns; ++turn) {
    std::vector<Message> messages{
        {Role::System, act_system},
        {Role::User, render_context(question, memory.text)},
    };
    traj.per_turn_context_tokens.push_back(detail::context_token_count(messages, counter));

    GenRequest request{messages, config.temperature, config.max_new_tokens, {}, config.seed};
    const std::string raw =
        backend.generate(request, GenMeta{question, static_cast<int>(turn), Phase::Act});
    auto parsed = parse_assistant_turn(raw, tools);
    if (!parsed.ok()) {
      traj.per_turn_context_tokens.pop_back();
      traj.status = TrajectoryStatus::FormatFailed;
      traj.failure = TrajectoryFailure{parsed.error().kind, turn, Phase::Act, parsed.error().detail};
      return traj;
    }

    Conversation conv;
    conv.question = question;
    conv.memory_in = memory;
    conv.thought = parsed.value().thought;
    conv.action = parsed.value().action;
    conv.assistant_text = raw;

    if (is_final(conv.action)) {
      traj.final_answer = std::get<FinalAnswer>(conv.action).answer;
      traj.conversations.push_back(std::move(conv));
      traj.status = TrajectoryStatus::Answered;
      return traj;
    }

    conv.observation = search(index, std::get<SearchCall>(conv.action).query, config.retrieval_k);
    const std::string obs = observation_text(*conv.observation);

    messages.push_back({Role::Assistant, raw});
    messages.push_back({Role::Tool, obs});
    messages.push_back({Role::User, memory_instruction});
    GenRequest memory_request{messages, config.temperature, config.max_new_tokens, {}, config.seed};
    const std::string memory_raw =
        backend.generate(memory_request, GenMeta{question, static_cast<int>(turn), Phase::Memory});
    auto block = parse_memory_block(memory_raw);
    if (!block.ok()) {
      traj.per_turn_context_tokens.pop_back();
      traj.status = TrajectoryStatus::FormatFailed;
      traj.failure = TrajectoryFailure{block.error().kind, turn, Phase::Memory, block.error().detail};
      return traj;
    }
    conv.memory_update_text = memory_raw;

    MemoryState next = enforce_budget(block.value(), config.memory_budget, counter);
    conv.memory_out = next;
    traj.conversations.push_back(std::move(conv));
    memory = std::move(next);
  }

  traj.status = TrajectoryStatus::Truncated;
  return traj;
}

inline Trajectory run_episode_react(const std::string& question, Backend& backend,
                                    const Index& index, const EpisodeConfig& config,
                                    const PromptSet& prompts = PromptSet::builtin(),
                                    const TokenCounter& counter = default_token_counter()) {
  config.validate();
  if (config.mode != AgentMode::ReAct)
    throw std::invalid_argument("run_episode_react drives ReAct mode only");

  Trajectory traj;
  traj.question = question;
  traj.mode = AgentMode::ReAct;
  traj.prompt_hash = prompts.hash();

  const std::set<std::string> tools{config.tool_name};
  std::vector<Message> messages{
      {Role::System, prompts.render_react_system(config.tool_name)},
      {Role::User, question},
  };

  for (std::size_t turn = 1; turn <= config.max_turns; ++turn) {
    const std::size_t context_tokens = detail::context_token_count(messages, counter);
    if (context_tokens > config.context_window) {
      traj.status = TrajectoryStatus::Truncated;
      return traj;
    }
    traj.per_turn_context_tokens.push_back(context_tokens);

    GenRequest request{messages, config.temperature, config.max_new_tokens, {}, config.seed};
    const std::string raw =
        backend.generate(request, GenMeta{question, static_cast<int>(turn), Phase::Act});
    auto parsed = parse_assistant_turn(raw, tools);
    if (!parsed.ok()) {
      traj.per_turn_context_tokens.pop_back();
      traj.status = TrajectoryStatus::FormatFailed;
      traj.failure = TrajectoryFailure{parsed.error().kind, turn, Phase::Act, parsed.error().detail};
      return traj;
    }

    Conversation conv;
    conv.question = question;
    conv.memory_in = MemoryState::empty();
    conv.thought = parsed.value().thought;
    conv.action = parsed.value().action;
    conv.assistant_text = raw;

    if (is_final(conv.action)) {
      traj.final_answer = std::get<FinalAnswer>(conv.action).answer;
      traj.conversations.push_back(std::move(conv));
      traj.status = TrajectoryStatus::Answered;
      return traj;
    }

    conv.observation = search(index, std::get<SearchCall>(conv.action).query, config.retrieval_k);
    messages.push_back({Role::Assistant, raw});
    messages.push_back({Role::Tool, observation_text(*conv.observation)});
    traj.conversations.push_back(std::move(conv));
  }

  traj.status = TrajectoryStatus::Truncated;
  return traj;
}

struct EpisodeOutcome {
  std::optional<Trajectory> trajectory;
  std::string error;  // empty on success

  bool ok() const { return trajectory.has_value(); }
};

// Samples group_size episodes for one question with distinct derived seeds.
// Episode errors (transport failures, script gaps) are captured per slot so
// one bad rollout never aborts its siblings.
inline std::vector<EpisodeOutcome> run_group(const std::string& question, std::size_t group_size,
                                             Backend& backend, const Index& index,
                                             const EpisodeConfig& config,
                                             const PromptSet& prompts = PromptSet::builtin(),
                                             const TokenCounter& counter = default_token_counter()) {
  if (group_size < 2)
    throw std::invalid_argument("group size must be at least 2 for advantage normalization");
  config.validate();

  std::vector<EpisodeOutcome> outcomes;
  outcomes.reserve(group_size);
  for (std::size_t i = 0; i < group_size; ++i) {
    EpisodeConfig derived = config;
    derived.seed = config.seed + static_cast<std::int64_t>(i);
    try {
      Trajectory t = config.mode == AgentMode::ReAct
                         ? run_episode_react(question, backend, index, derived, prompts, counter)
                         : run_episode(question, backend, index, derived, prompts, counter);
      outcomes.push_back(EpisodeOutcome{std::move(t), ""});
    } catch (const std::exception& e) {
      outcomes.push_back(EpisodeOutcome{std::nullopt, e.what()});
    }
  }
  return outcomes;
}

// Structural check for the two tuple shapes: non-final conversations carry an
// observation (and, in MemSearcher mode, a rewritten memory); the final one
// carries neither. ReAct conversations never have memory_out.
inline bool conversation_shapes_ok(const Trajectory& traj) {
  for (std::size_t i = 0; i < traj.conversations.size(); ++i) {
    const Conversation& c = traj.conversations[i];
    if (is_final(c.action)) {
      if (i + 1 != traj.conversations.size()) return false;
      if (c.observation.has_value() || c.memory_out.has_value()) return false;
    } else {
      if (!c.observation.has_value()) return false;
      const bool wants_memory = traj.mode == AgentMode::MemSearcher;
      if (c.memory_out.has_value() != wants_memory) return false;
    }
  }
  if (traj.status == TrajectoryStatus::Answered) {
    if (traj.conversations.empty() || !is_final(traj.conversations.back().action)) return false;
    if (!traj.final_answer.has_value()) return false;
  }
  return traj.per_turn_context_tokens.size() == traj.conversations.size();
}

inline nlohmann::ordered_json memory_state_to_json(const MemoryState& m) {
  return nlohmann::ordered_json{
      {"text", m.text}, {"token_count", m.token_count}, {"truncated", m.truncated}};
}

inline MemoryState memory_state_from_json(const nlohmann::ordered_json& j) {
  MemoryState m;
  m.text = j.at("text").get<std::string>();
  m.token_count = j.at("token_count").get<std::size_t>();
  m.truncated = j.at("truncated").get<bool>();
  return m;
}

inline nlohmann::ordered_json passage_to_json(const Passage& p) {
  return nlohmann::ordered_json{
      {"id", p.id}, {"title", p.title}, {"body", p.body}, {"score", p.score}};
}

inline Passage passage_from_json(const nlohmann::ordered_json& j) {
  Passage p;
  p.id = j.at("id").get<std::string>();
  p.title = j.at("title").get<std::string>();
  p.body = j.at("body").get<std::string>();
  p.score = j.at("score").get<double>();
  return p;
}

inline nlohmann::ordered_json action_to_json(const Action& action) {
  if (is_final(action)) {
    return nlohmann::ordered_json{{"type", "answer"},
                                  {"answer", std::get<FinalAnswer>(action).answer}};
  }
  const auto& call = std::get<SearchCall>(action);
  return nlohmann::ordered_json{
      {"type", "search"}, {"tool_name", call.tool_name}, {"query", call.query}};
}

inline Action action_from_json(const nlohmann::ordered_json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "answer") return FinalAnswer{j.at("answer").get<std::string>()};
  if (type == "search")
    return SearchCall{j.at("tool_name").get<std::string>(), j.at("query").get<std::string>()};
  throw std::invalid_argument("unknown action type: " + type);
}

inline nlohmann::ordered_json conversation_to_json(const Conversation& c) {
  nlohmann::ordered_json j;
  j["question"] = c.question;
  j["memory_in"] = memory_state_to_json(c.memory_in);
  j["thought"] = c.thought;
  j["action"] = action_to_json(c.action);
  if (c.observation) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : *c.observation) arr.push_back(passage_to_json(p));
    j["observation"] = std::move(arr);
  } else {
    j["observation"] = nullptr;
  }
  j["memory_out"] = c.memory_out ? memory_state_to_json(*c.memory_out)
                                 : nlohmann::ordered_json(nullptr);
  j["assistant_text"] = c.assistant_text;
  j["memory_update_text"] =
      c.memory_update_text ? nlohmann::ordered_json(*c.memory_update_text)
                           : nlohmann::ordered_json(nullptr);
  return j;
}

inline Conversation conversation_from_json(const nlohmann::ordered_json& j) {
  Conversation c;
  c.question = j.at("question").get<std::string>();
  c.memory_in = memory_state_from_json(j.at("memory_in"));
  c.thought = j.at("thought").get<std::string>();
  c.action = action_from_json(j.at("action"));
  if (!j.at("observation").is_null()) {
    std::vector<Passage> passages;
    for (const auto& p : j.at("observation")) passages.push_back(passage_from_json(p));
    c.observation = std::move(passages);
  }
  if (!j.at("memory_out").is_null()) c.memory_out = memory_state_from_json(j.at("memory_out"));
  c.assistant_text = j.at("assistant_text").get<std::string>();
  if (!j.at("memory_update_text").is_null())
    c.memory_update_text = j.at("memory_update_text").get<std::string>();
  return c;
}

inline nlohmann::ordered_json trajectory_to_json(const Trajectory& t) {
  nlohmann::ordered_json j;
  j["question"] = t.question;
  j["mode"] = to_string(t.mode);
  j["status"] = to_string(t.status);
  j["final_answer"] =
      t.final_answer ? nlohmann::ordered_json(*t.final_answer) : nlohmann::ordered_json(nullptr);
  j["prompt_hash"] = t.prompt_hash;
  j["per_turn_context_tokens"] = t.per_turn_context_tokens;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : t.conversations) arr.push_back(conversation_to_json(c));
  j["conversations"] = std::move(arr);
  if (t.failure) {
    j["failure"] = nlohmann::ordered_json{{"kind", to_string(t.failure->kind)},
                                          {"turn", t.failure->turn},
                                          {"phase", to_string(t.failure->phase)},
                                          {"detail", t.failure->detail}};
  } else {
    j["failure"] = nullptr;
  }
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::ordered_json& j) {
  Trajectory t;
  t.question = j.at("question").get<std::string>();
  t.mode = agent_mode_from_string(j.at("mode").get<std::string>());
  t.status = trajectory_status_from_string(j.at("status").get<std::string>());
  if (!j.at("final_answer").is_null()) t.final_answer = j.at("final_answer").get<std::string>();
  t.prompt_hash = j.at("prompt_hash").get<std::string>();
  t.per_turn_context_tokens =
      j.at("per_turn_context_tokens").get<std::vector<std::size_t>>();
  for (const auto& c : j.at("conversations")) t.conversations.push_back(conversation_from_json(c));
  if (!j.at("failure").is_null()) {
    const auto& f = j.at("failure");
    t.failure = TrajectoryFailure{
        format_error_kind_from_string(f.at("kind").get<std::string>()),
        f.at("turn").get<std::size_t>(), phase_from_string(f.at("phase").get<std::string>()),
        f.at("detail").get<std::string>()};
  }
  return t;
}

// JSONL: one trajectory per line, stable field order.
inline void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajectories) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& t : trajectories) out << trajectory_to_json(t).dump() << "\n";
}

inline std::vector<Trajectory> read_trajectories(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<Trajectory> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed trajectory line");
    out.push_back(trajectory_from_json(j));
  }
  return out;
}

}  // namespace memsearch
