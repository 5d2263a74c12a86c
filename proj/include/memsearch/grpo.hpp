#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "memsearch/agent.hpp"
#include "memsearch/hash.hpp"
#include "memsearch/memory.hpp"
#include "memsearch/prompts.hpp"
#include "memsearch/protocol.hpp"
#include "memsearch/reward.hpp"

// Group-relative policy optimization numerics over per-token logprobs that
// an external training runtime supplies. Pure arithmetic: no gradients, no
// weights. The objective treats each conversation of each trajectory as one
// weighted term and averages with 1/(total conversations).
//
// Loss masking: only model-generated tokens count. Prompt tokens (question,
// memory-in, instructions) and tool-injected tokens (search results) are
// excluded from every sum, and their logprob entries may be absent markers
// (NaN); masked-out entries are never read, so perturbing them cannot change
// any result bit.

namespace memsearch {

enum class TokenRole { Prompt, ModelGenerated, ToolInjected };

inline const char* to_string(TokenRole role) {
  switch (role) {
    case TokenRole::Prompt: return "prompt";
    case TokenRole::ModelGenerated: return "model";
    case TokenRole::ToolInjected: return "tool";
  }
  return "prompt";
}

inline TokenRole token_role_from_string(std::string_view s) {
  if (s == "prompt") return TokenRole::Prompt;
  if (s == "model") return TokenRole::ModelGenerated;
  if (s == "tool") return TokenRole::ToolInjected;
  throw std::invalid_argument("unknown token role: " + std::string(s));
}

// Contiguous span of one serialized conversation with a single role.
struct Segment {
  std::string text;
  TokenRole role = TokenRole::Prompt;

  bool trainable() const { return role == TokenRole::ModelGenerated; }
};

struct ConversationBatch {
  std::vector<TokenRole> roles;
  std::vector<double> logp_policy;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;
  double advantage = 0.0;

  void validate() const {
    const std::size_t n = roles.size();
    if (logp_policy.size() != n || logp_old.size() != n || logp_ref.size() != n)
      throw std::invalid_argument("conversation batch arrays must share one length");
  }
};

enum class RatioMode { SequenceLevel, TokenLevel };

inline const char* to_string(RatioMode mode) {
  return mode == RatioMode::SequenceLevel ? "sequence" : "token";
}

inline RatioMode ratio_mode_from_string(std::string_view s) {
  if (s == "sequence") return RatioMode::SequenceLevel;
  if (s == "token") return RatioMode::TokenLevel;
  throw std::invalid_argument("unknown ratio mode: " + std::string(s));
}

struct TrainConfig {
  double clip_epsilon = 0.2;
  double kl_beta = 0.001;
  double std_floor = 1e-8;
  RatioMode ratio_mode = RatioMode::SequenceLevel;

  void validate() const {
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
      throw std::invalid_argument("clip_epsilon must lie in (0, 1)");
    if (kl_beta < 0.0) throw std::invalid_argument("kl_beta must be nonnegative");
    if (!(std_floor > 0.0)) throw std::invalid_argument("std_floor must be positive");
  }
};

// Group z-scores with population std. Degenerate groups (std below the
// floor) get all-zero advantages instead of a blow-up.
inline std::vector<double> group_advantages(const std::vector<double>& rewards,
                                            double std_floor = 1e-8) {
  if (rewards.size() < 2)
    throw std::invalid_argument("group_advantages requires at least two rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  const double std = std::sqrt(var);

  std::vector<double> out(rewards.size(), 0.0);
  if (std < std_floor) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / std;
  return out;
}

// A_{i,j} = A_i for every conversation j of trajectory i.
inline std::vector<std::vector<double>> propagate_advantages(
    const std::vector<double>& advantages, const std::vector<std::size_t>& conv_counts) {
  if (advantages.size() != conv_counts.size())
    throw std::invalid_argument("advantages and conversation counts must align");
  std::vector<std::vector<double>> table;
  table.reserve(advantages.size());
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    if (conv_counts[i] < 1)
      throw std::invalid_argument("every trajectory needs at least one conversation");
    table.emplace_back(conv_counts[i], advantages[i]);
  }
  return table;
}

inline std::vector<int> build_loss_mask(const std::vector<TokenRole>& roles) {
  std::vector<int> mask(roles.size(), 0);
  for (std::size_t i = 0; i < roles.size(); ++i)
    mask[i] = roles[i] == TokenRole::ModelGenerated ? 1 : 0;
  return mask;
}

inline double conversation_logprob(const std::vector<double>& logps, const std::vector<int>& mask) {
  if (logps.size() != mask.size())
    throw std::invalid_argument("logprobs and mask must align");
  double sum = 0.0;
  for (std::size_t i = 0; i < logps.size(); ++i) {
    if (mask[i]) sum += logps[i];
  }
  return sum;
}

inline double surrogate_term(double ratio, double advantage, double clip_epsilon) {
  const double clipped =
      std::min(std::max(ratio, 1.0 - clip_epsilon), 1.0 + clip_epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

// Nonnegative per-token KL estimator exp(d) - d - 1, d = logp_ref - logp_policy,
// averaged over masked positions; 0 when the mask selects nothing.
inline double kl_term(const std::vector<double>& logp_policy, const std::vector<double>& logp_ref,
                      const std::vector<int>& mask) {
  if (logp_policy.size() != mask.size() || logp_ref.size() != mask.size())
    throw std::invalid_argument("logprobs and mask must align");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double d = logp_ref[i] - logp_policy[i];
    sum += std::exp(d) - d - 1.0;
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

// One conversation's contribution: clipped surrogate minus the KL penalty.
// A conversation whose mask selects no tokens contributes exactly 0.
inline double conversation_term(const ConversationBatch& batch, const TrainConfig& config) {
  batch.validate();
  const std::vector<int> mask = build_loss_mask(batch.roles);
  std::size_t masked = 0;
  for (int m : mask) masked += static_cast<std::size_t>(m);
  if (masked == 0) return 0.0;

  double surrogate = 0.0;
  if (config.ratio_mode == RatioMode::SequenceLevel) {
    const double ratio = std::exp(conversation_logprob(batch.logp_policy, mask) -
                                  conversation_logprob(batch.logp_old, mask));
    surrogate = surrogate_term(ratio, batch.advantage, config.clip_epsilon);
  } else {
    double sum = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      const double ratio = std::exp(batch.logp_policy[i] - batch.logp_old[i]);
      sum += surrogate_term(ratio, batch.advantage, config.clip_epsilon);
    }
    surrogate = sum / static_cast<double>(masked);
  }
  return surrogate - config.kl_beta * kl_term(batch.logp_policy, batch.logp_ref, mask);
}

// The full objective: (1 / total conversations) * sum of conversation terms,
// summed trajectory by trajectory in order (deterministic reduction).
inline double multi_context_objective(const std::vector<std::vector<ConversationBatch>>& groups,
                                      const TrainConfig& config) {
  config.validate();
  std::size_t total = 0;
  for (const auto& g : groups) total += g.size();
  if (total == 0) throw std::invalid_argument("objective needs at least one conversation");

  double sum = 0.0;
  for (const auto& trajectory_batches : groups) {
    for (const auto& batch : trajectory_batches) sum += conversation_term(batch, config);
  }
  return sum / static_cast<double>(total);
}

// Serialized conversation pieces, in model order. MemSearcher turns carry
// their own fresh prompt; history-mode turns fold the whole running context
// into one untrainable prompt segment.
inline std::vector<std::vector<Segment>> trajectory_segments(const Trajectory& traj,
                                                             const EpisodeConfig& config,
                                                             const PromptSet& prompts) {
  std::vector<std::vector<Segment>> out;
  out.reserve(traj.conversations.size());

  if (traj.mode == AgentMode::MemSearcher) {
    const std::string act_system = prompts.render_act_system(config.tool_name);
    const std::string memory_instruction = prompts.render_memory_update(config.memory_budget);
    for (const Conversation& conv : traj.conversations) {
      std::vector<Segment> segs;
      segs.push_back({act_system, TokenRole::Prompt});
      segs.push_back({render_context(conv.question, conv.memory_in.text), TokenRole::Prompt});
      segs.push_back({conv.assistant_text, TokenRole::ModelGenerated});
      if (!is_final(conv.action)) {
        segs.push_back({observation_text(*conv.observation), TokenRole::ToolInjected});
        segs.push_back({memory_instruction, TokenRole::Prompt});
        segs.push_back({conv.memory_update_text.value_or(""), TokenRole::ModelGenerated});
      }
      out.push_back(std::move(segs));
    }
    return out;
  }

  std::string context = prompts.render_react_system(config.tool_name) + "\n" + traj.question;
  for (const Conversation& conv : traj.conversations) {
    std::vector<Segment> segs;
    segs.push_back({context, TokenRole::Prompt});
    segs.push_back({conv.assistant_text, TokenRole::ModelGenerated});
    if (!is_final(conv.action)) {
      const std::string obs = observation_text(*conv.observation);
      segs.push_back({obs, TokenRole::ToolInjected});
      context += "\n" + conv.assistant_text + "\n" + obs;
    }
    out.push_back(std::move(segs));
  }
  return out;
}

// One question's sampled group with its scored outcomes.
struct GroupBatch {
  std::string group_id;
  std::string question;
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

inline nlohmann::ordered_json group_to_json(const GroupBatch& g) {
  nlohmann::ordered_json j;
  j["group_id"] = g.group_id;
  j["question"] = g.question;
  j["rewards"] = g.rewards;
  j["advantages"] = g.advantages;
  auto arr = nlohmann::ordered_json::array();
  for (const Trajectory& t : g.trajectories) arr.push_back(trajectory_to_json(t));
  j["trajectories"] = std::move(arr);
  return j;
}

inline GroupBatch group_from_json(const nlohmann::ordered_json& j) {
  GroupBatch g;
  g.group_id = j.at("group_id").get<std::string>();
  g.question = j.at("question").get<std::string>();
  g.rewards = j.at("rewards").get<std::vector<double>>();
  g.advantages = j.at("advantages").get<std::vector<double>>();
  for (const auto& t : j.at("trajectories")) g.trajectories.push_back(trajectory_from_json(t));
  if (g.rewards.size() != g.trajectories.size() || g.advantages.size() != g.trajectories.size())
    throw std::invalid_argument("group file: rewards/advantages/trajectories lengths differ");
  return g;
}

inline GroupBatch make_group_batch(const std::string& question,
                                   std::vector<Trajectory> trajectories,
                                   const std::vector<std::string>& golds,
                                   double std_floor = 1e-8) {
  if (trajectories.size() < 2)
    throw std::invalid_argument("a group needs at least two trajectories");
  GroupBatch group;
  group.group_id = to_hex(fnv1a64(question));
  group.question = question;
  group.trajectories = std::move(trajectories);
  group.rewards.reserve(group.trajectories.size());
  for (const Trajectory& t : group.trajectories)
    group.rewards.push_back(compute_reward(t, golds).reward);
  group.advantages = group_advantages(group.rewards, std_floor);
  return group;
}

// A batch must be rebuilt with the same prompt templates the episodes ran
// under, or the serialized token spans would not match what the model saw.
class PromptHashMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One exported conversation. The logp arrays are empty until a training
// runtime fills them in; entries may be NaN at untrainable positions.
struct ConversationRecord {
  std::string group_id;
  std::size_t trajectory_index = 0;
  std::size_t conversation_index = 0;
  std::string prompt_text;
  std::vector<Segment> segments;
  double advantage = 0.0;
  double reward = 0.0;
  std::vector<double> logp_policy;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;

  bool has_logprobs() const { return !logp_policy.empty(); }
};

namespace detail {

inline nlohmann::ordered_json logps_to_json(const std::vector<double>& logps) {
  auto arr = nlohmann::ordered_json::array();
  for (double v : logps) {
    if (std::isnan(v))
      arr.push_back(nullptr);
    else
      arr.push_back(v);
  }
  return arr;
}

inline std::vector<double> logps_from_json(const nlohmann::ordered_json& arr) {
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr)
    out.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
  return out;
}

}  // namespace detail

inline nlohmann::ordered_json conversation_record_to_json(const ConversationRecord& r) {
  nlohmann::ordered_json j;
  j["group_id"] = r.group_id;
  j["trajectory_index"] = r.trajectory_index;
  j["conversation_index"] = r.conversation_index;
  j["prompt_text"] = r.prompt_text;
  auto segs = nlohmann::ordered_json::array();
  for (const Segment& s : r.segments) {
    segs.push_back(nlohmann::ordered_json{
        {"text", s.text}, {"role", to_string(s.role)}, {"trainable", s.trainable()}});
  }
  j["segments"] = std::move(segs);
  j["advantage"] = r.advantage;
  j["reward"] = r.reward;
  if (r.has_logprobs()) {
    j["logp_policy"] = detail::logps_to_json(r.logp_policy);
    j["logp_old"] = detail::logps_to_json(r.logp_old);
    j["logp_ref"] = detail::logps_to_json(r.logp_ref);
  }
  return j;
}

inline ConversationRecord conversation_record_from_json(const nlohmann::ordered_json& j) {
  ConversationRecord r;
  r.group_id = j.at("group_id").get<std::string>();
  r.trajectory_index = j.at("trajectory_index").get<std::size_t>();
  r.conversation_index = j.at("conversation_index").get<std::size_t>();
  r.prompt_text = j.at("prompt_text").get<std::string>();
  for (const auto& s : j.at("segments")) {
    r.segments.push_back(
        {s.at("text").get<std::string>(), token_role_from_string(s.at("role").get<std::string>())});
  }
  r.advantage = j.at("advantage").get<double>();
  r.reward = j.at("reward").get<double>();
  if (j.contains("logp_policy")) {
    r.logp_policy = detail::logps_from_json(j.at("logp_policy"));
    r.logp_old = detail::logps_from_json(j.at("logp_old"));
    r.logp_ref = detail::logps_from_json(j.at("logp_ref"));
  }
  return r;
}

inline std::vector<ConversationRecord> group_records(const GroupBatch& group,
                                                     const EpisodeConfig& config,
                                                     const PromptSet& prompts) {
  std::vector<ConversationRecord> records;
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    const Trajectory& traj = group.trajectories[i];
    if (!traj.prompt_hash.empty() && traj.prompt_hash != prompts.hash())
      throw PromptHashMismatch("trajectory " + std::to_string(i) +
                               " was produced under a different prompt set");
    const auto segments = trajectory_segments(traj, config, prompts);
    for (std::size_t j = 0; j < segments.size(); ++j) {
      ConversationRecord r;
      r.group_id = group.group_id;
      r.trajectory_index = i;
      r.conversation_index = j;
      std::string prompt;
      for (const Segment& s : segments[j]) {
        if (s.role != TokenRole::Prompt) break;
        if (!prompt.empty()) prompt += "\n";
        prompt += s.text;
      }
      r.prompt_text = std::move(prompt);
      r.segments = segments[j];
      r.advantage = group.advantages[i];
      r.reward = group.rewards[i];
      records.push_back(std::move(r));
    }
  }
  return records;
}

inline void write_training_batch(const std::string& path,
                                 const std::vector<ConversationRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& r : records) out << conversation_record_to_json(r).dump() << "\n";
}

inline std::vector<ConversationRecord> read_training_batch(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<ConversationRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed batch line");
    records.push_back(conversation_record_from_json(j));
  }
  return records;
}

inline void export_training_batch(const GroupBatch& group, const EpisodeConfig& config,
                                  const PromptSet& prompts, const std::string& path) {
  write_training_batch(path, group_records(group, config, prompts));
}

// Expands a record into per-token form under the runtime token counter: each
// segment contributes counter(text) tokens of its role. Requires logp arrays
// aligned with that expansion.
inline ConversationBatch to_conversation_batch(const ConversationRecord& record,
                                               const TokenCounter& counter = default_token_counter()) {
  ConversationBatch batch;
  for (const Segment& s : record.segments) {
    const std::size_t n = counter(s.text);
    batch.roles.insert(batch.roles.end(), n, s.role);
  }
  if (!record.has_logprobs())
    throw std::invalid_argument("record carries no logprob arrays");
  batch.logp_policy = record.logp_policy;
  batch.logp_old = record.logp_old;
  batch.logp_ref = record.logp_ref;
  batch.advantage = record.advantage;
  batch.validate();
  return batch;
}

// Groups records by (group_id, trajectory_index) in first-appearance order.
inline std::vector<std::vector<ConversationBatch>> batches_from_records(
    const std::vector<ConversationRecord>& records,
    const TokenCounter& counter = default_token_counter()) {
  std::vector<std::pair<std::string, std::size_t>> keys;
  std::vector<std::vector<ConversationBatch>> groups;
  for (const ConversationRecord& r : records) {
    const std::pair<std::string, std::size_t> key{r.group_id, r.trajectory_index};
    std::size_t slot = keys.size();
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (keys[i] == key) {
        slot = i;
        break;
      }
    }
    if (slot == keys.size()) {
      keys.push_back(key);
      groups.emplace_back();
    }
    groups[slot].push_back(to_conversation_batch(r, counter));
  }
  return groups;
}

}  // namespace memsearch
