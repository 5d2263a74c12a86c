#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "memsearch/agent.hpp"
#include "memsearch/memory.hpp"
#include "memsearch/protocol.hpp"

// Outcome scoring. The scalar reward is piecewise:
//
//   0      bad format (no boxed answer, malformed tags, truncation)
//   0.1    format correct but the answer shares no tokens with any gold
//   F1     otherwise
//
// so a well-formed wrong answer still beats a malformed turn.

namespace memsearch {

// QA answer normalization: lowercase, drop punctuation characters, split on
// whitespace, drop the articles "a", "an", "the".
inline std::vector<std::string> normalize_answer(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char ch : text) {
    if (std::ispunct(ch)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(ch)));
  }
  std::vector<std::string> tokens;
  for (auto part : split_whitespace(cleaned)) {
    if (part == "a" || part == "an" || part == "the") continue;
    tokens.emplace_back(part);
  }
  return tokens;
}

namespace detail {

// Bag-overlap F1 with multiplicity over already-normalized token lists.
inline double f1_tokens(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, int> remaining;
  for (const auto& t : gold) ++remaining[t];
  std::size_t overlap = 0;
  for (const auto& t : pred) {
    auto it = remaining.find(t);
    if (it != remaining.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace detail

inline double f1_score(std::string_view pred, const std::vector<std::string>& golds) {
  if (golds.empty()) throw std::invalid_argument("f1_score requires at least one gold answer");
  const auto pred_tokens = normalize_answer(pred);
  double best = 0.0;
  for (const auto& gold : golds)
    best = std::max(best, detail::f1_tokens(pred_tokens, normalize_answer(gold)));
  return best;
}

inline int exact_match(std::string_view pred, const std::vector<std::string>& golds) {
  if (golds.empty()) throw std::invalid_argument("exact_match requires at least one gold answer");
  const auto pred_tokens = normalize_answer(pred);
  for (const auto& gold : golds) {
    if (pred_tokens == normalize_answer(gold)) return 1;
  }
  return 0;
}

// Structural format check, re-verified from the stored raw generations so it
// holds for trajectories loaded from disk, not just freshly rolled ones.
inline bool check_format(const Trajectory& traj) {
  if (traj.status != TrajectoryStatus::Answered) return false;
  if (!traj.final_answer.has_value()) return false;
  if (traj.conversations.empty()) return false;
  if (!conversation_shapes_ok(traj)) return false;

  for (std::size_t i = 0; i < traj.conversations.size(); ++i) {
    const Conversation& conv = traj.conversations[i];
    std::set<std::string> tools;
    if (!is_final(conv.action)) tools.insert(std::get<SearchCall>(conv.action).tool_name);
    auto parsed = parse_assistant_turn(conv.assistant_text, tools);
    if (!parsed.ok()) return false;
    if (is_final(parsed.value().action) != is_final(conv.action)) return false;

    const bool wants_memory =
        traj.mode == AgentMode::MemSearcher && !is_final(conv.action);
    if (wants_memory) {
      if (!conv.memory_update_text.has_value()) return false;
      if (!parse_memory_block(*conv.memory_update_text).ok()) return false;
    }
  }

  const Conversation& last = traj.conversations.back();
  if (!is_final(last.action)) return false;
  return std::get<FinalAnswer>(last.action).answer == *traj.final_answer;
}

struct RewardBreakdown {
  bool format_ok = false;
  double f1 = 0.0;
  double reward = 0.0;
};

inline RewardBreakdown compute_reward(const Trajectory& traj, const std::vector<std::string>& golds) {
  if (golds.empty()) throw std::invalid_argument("compute_reward requires at least one gold answer");
  RewardBreakdown out;
  out.format_ok = check_format(traj);
  if (!out.format_ok) return out;
  out.f1 = f1_score(*traj.final_answer, golds);
  out.reward = out.f1 == 0.0 ? 0.1 : out.f1;
  return out;
}

struct DatasetItem {
  std::string question;
  std::vector<std::string> golden_answers;
};

// Dataset JSONL: {"question": "...", "golden_answers": ["...", ...]} per line.
// Questions go into rendered contexts verbatim, so reserved tags are refused.
inline std::vector<DatasetItem> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<DatasetItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string at = path + ":" + std::to_string(lineno);
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw std::runtime_error(at + ": malformed dataset line");
    if (!j.contains("question") || !j["question"].is_string())
      throw std::runtime_error(at + ": missing string field 'question'");
    if (!j.contains("golden_answers") || !j["golden_answers"].is_array() ||
        j["golden_answers"].empty())
      throw std::runtime_error(at + ": missing non-empty array field 'golden_answers'");
    DatasetItem item;
    item.question = j["question"].get<std::string>();
    if (contains_reserved_tag(item.question))
      throw std::runtime_error(at + ": question contains a reserved tag");
    for (const auto& g : j["golden_answers"]) {
      if (!g.is_string()) throw std::runtime_error(at + ": golden_answers entries must be strings");
      item.golden_answers.push_back(g.get<std::string>());
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace memsearch
