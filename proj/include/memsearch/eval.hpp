#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "memsearch/agent.hpp"
#include "memsearch/backend.hpp"
#include "memsearch/prompts.hpp"
#include "memsearch/retrieval.hpp"
#include "memsearch/reward.hpp"

// Dataset evaluation, context telemetry, and the golden replay check.
// Everything here is deterministic given a scripted backend: items are
// claimed by workers in any order but aggregated in dataset order, and
// reports carry no timestamps, so identical inputs give identical bytes.

namespace memsearch {

struct EvalItemResult {
  bool failed = false;          // episode raised (transport failure, script gap)
  std::string error;
  int em = 0;
  double f1 = 0.0;
  TrajectoryStatus status = TrajectoryStatus::Truncated;
  std::vector<std::size_t> per_turn_context_tokens;
  std::size_t turns = 0;
};

struct EvalReport {
  std::string dataset;
  std::size_t item_count = 0;
  std::size_t failed_items = 0;
  double em_mean = 0.0;
  double f1_mean = 0.0;
  double truncated_fraction = 0.0;
  std::vector<double> mean_context_tokens_per_turn;
  std::map<std::size_t, std::size_t> turns_histogram;
};

inline EvalItemResult evaluate_item(const DatasetItem& item, Backend& backend, const Index& index,
                                    const EpisodeConfig& config, const PromptSet& prompts,
                                    const TokenCounter& counter) {
  EvalItemResult result;
  try {
    Trajectory traj = config.mode == AgentMode::ReAct
                          ? run_episode_react(item.question, backend, index, config, prompts, counter)
                          : run_episode(item.question, backend, index, config, prompts, counter);
    result.status = traj.status;
    result.per_turn_context_tokens = traj.per_turn_context_tokens;
    result.turns = traj.conversations.size();
    if (traj.status == TrajectoryStatus::Answered) {
      result.em = exact_match(*traj.final_answer, item.golden_answers);
      result.f1 = f1_score(*traj.final_answer, item.golden_answers);
    }
  } catch (const std::exception& e) {
    result.failed = true;
    result.error = e.what();
  }
  return result;
}

// Failed items stay in the denominator and score 0, so a flaky backend can
// only lower the reported means, never inflate them.
inline EvalReport aggregate_results(const std::string& dataset_name,
                                    const std::vector<EvalItemResult>& results) {
  EvalReport report;
  report.dataset = dataset_name;
  report.item_count = results.size();

  double em_sum = 0.0;
  double f1_sum = 0.0;
  std::size_t truncated = 0;
  std::size_t max_turns_seen = 0;
  for (const auto& r : results) {
    if (r.failed) {
      ++report.failed_items;
      continue;
    }
    em_sum += r.em;
    f1_sum += r.f1;
    if (r.status == TrajectoryStatus::Truncated) ++truncated;
    ++report.turns_histogram[r.turns];
    max_turns_seen = std::max(max_turns_seen, r.per_turn_context_tokens.size());
  }
  const double n = static_cast<double>(results.size());
  report.em_mean = em_sum / n;
  report.f1_mean = f1_sum / n;
  report.truncated_fraction = static_cast<double>(truncated) / n;

  for (std::size_t turn = 0; turn < max_turns_seen; ++turn) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : results) {
      if (r.failed || turn >= r.per_turn_context_tokens.size()) continue;
      sum += static_cast<double>(r.per_turn_context_tokens[turn]);
      ++count;
    }
    report.mean_context_tokens_per_turn.push_back(sum / static_cast<double>(count));
  }
  return report;
}

inline std::vector<EvalItemResult> run_items(const std::vector<DatasetItem>& items,
                                             Backend& backend, const Index& index,
                                             const EpisodeConfig& config, const PromptSet& prompts,
                                             std::size_t workers, const TokenCounter& counter) {
  std::vector<EvalItemResult> results(items.size());
  const std::size_t pool = std::max<std::size_t>(1, std::min(workers, items.size()));
  if (pool == 1) {
    for (std::size_t i = 0; i < items.size(); ++i)
      results[i] = evaluate_item(items[i], backend, index, config, prompts, counter);
    return results;
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next.fetch_add(1); i < items.size(); i = next.fetch_add(1))
      results[i] = evaluate_item(items[i], backend, index, config, prompts, counter);
  };
  std::vector<std::thread> threads;
  threads.reserve(pool);
  for (std::size_t t = 0; t < pool; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return results;
}

inline EvalReport run_eval(const std::vector<DatasetItem>& items, const std::string& dataset_name,
                           Backend& backend, const Index& index, const EpisodeConfig& config,
                           const PromptSet& prompts = PromptSet::builtin(),
                           std::size_t workers = 1,
                           const TokenCounter& counter = default_token_counter()) {
  if (items.empty()) throw std::invalid_argument("dataset is empty");
  config.validate();
  return aggregate_results(dataset_name,
                           run_items(items, backend, index, config, prompts, workers, counter));
}

inline nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["dataset"] = report.dataset;
  j["item_count"] = report.item_count;
  j["failed_items"] = report.failed_items;
  j["em_mean"] = report.em_mean;
  j["f1_mean"] = report.f1_mean;
  j["truncated_fraction"] = report.truncated_fraction;
  j["mean_context_tokens_per_turn"] = report.mean_context_tokens_per_turn;
  auto hist = nlohmann::ordered_json::object();
  for (const auto& [turns, count] : report.turns_histogram) hist[std::to_string(turns)] = count;
  j["turns_histogram"] = std::move(hist);
  return j;
}

inline void write_report(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << report_to_json(report).dump(1) << "\n";
}

// Per-turn mean acting-context tokens for both modes over one question set.
// Entries with no surviving sample at that turn are NaN (written as "nan").
struct ContextTelemetry {
  std::size_t max_turns = 0;
  std::vector<double> memsearcher_mean;
  std::vector<double> react_mean;
};

namespace detail {

inline std::vector<double> per_turn_means(const std::vector<std::vector<std::size_t>>& rows,
                                          std::size_t max_turns) {
  std::vector<double> means(max_turns, std::nan(""));
  for (std::size_t turn = 0; turn < max_turns; ++turn) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& row : rows) {
      if (turn >= row.size()) continue;
      sum += static_cast<double>(row[turn]);
      ++count;
    }
    if (count > 0) means[turn] = sum / static_cast<double>(count);
  }
  return means;
}

}  // namespace detail

// Requires the scripted backend: a live service would make the two columns
// incomparable between runs.
inline ContextTelemetry compare_context(const std::vector<std::string>& questions,
                                        ScriptedBackend& backend, const Index& index,
                                        const EpisodeConfig& base_config,
                                        const PromptSet& prompts = PromptSet::builtin(),
                                        const TokenCounter& counter = default_token_counter()) {
  if (questions.empty()) throw std::invalid_argument("question set is empty");
  base_config.validate();

  std::vector<std::vector<std::size_t>> mem_rows;
  std::vector<std::vector<std::size_t>> react_rows;
  for (const auto& question : questions) {
    EpisodeConfig mem_config = base_config;
    mem_config.mode = AgentMode::MemSearcher;
    mem_rows.push_back(
        run_episode(question, backend, index, mem_config, prompts, counter).per_turn_context_tokens);

    EpisodeConfig react_config = base_config;
    react_config.mode = AgentMode::ReAct;
    react_rows.push_back(
        run_episode_react(question, backend, index, react_config, prompts, counter)
            .per_turn_context_tokens);
  }

  ContextTelemetry telemetry;
  telemetry.max_turns = base_config.max_turns;
  telemetry.memsearcher_mean = detail::per_turn_means(mem_rows, base_config.max_turns);
  telemetry.react_mean = detail::per_turn_means(react_rows, base_config.max_turns);
  return telemetry;
}

inline std::string telemetry_csv(const ContextTelemetry& telemetry) {
  std::ostringstream out;
  out << "turn,memsearcher_mean_context_tokens,react_mean_context_tokens\n";
  auto cell = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    nlohmann::json j = v;
    return j.dump();
  };
  for (std::size_t turn = 0; turn < telemetry.max_turns; ++turn) {
    out << (turn + 1) << "," << cell(telemetry.memsearcher_mean[turn]) << ","
        << cell(telemetry.react_mean[turn]) << "\n";
  }
  return out.str();
}

inline void write_telemetry_csv(const std::string& path, const ContextTelemetry& telemetry) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << telemetry_csv(telemetry);
}

struct ReplayResult {
  bool ok = true;
  std::vector<std::string> failures;

  void fail(std::string message) {
    ok = false;
    failures.push_back(std::move(message));
  }
};

// Golden replay: runs the shipped script against the shipped corpus and
// checks the episode against the recorded memories and answer. The fixture
// JSON names the script/corpus files relative to its own directory.
inline ReplayResult replay_case(const std::string& fixture_path,
                                const PromptSet& prompts = PromptSet::builtin(),
                                const TokenCounter& counter = default_token_counter()) {
  std::ifstream in(fixture_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open fixture: " + fixture_path);
  nlohmann::json fixture = nlohmann::json::parse(in, nullptr, false);
  if (fixture.is_discarded() || !fixture.is_object())
    throw std::runtime_error(fixture_path + ": malformed fixture JSON");

  const auto dir = std::filesystem::path(fixture_path).parent_path();
  const std::string question = fixture.at("question").get<std::string>();
  const auto golds = fixture.at("golden_answers").get<std::vector<std::string>>();
  const std::string script_path = (dir / fixture.at("script").get<std::string>()).string();
  const std::string corpus_path = (dir / fixture.at("corpus").get<std::string>()).string();
  const auto expected_memories = fixture.at("expected_memories").get<std::vector<std::string>>();
  const std::string expected_answer = fixture.at("expected_answer").get<std::string>();
  const std::size_t expected_conversations = fixture.at("expected_conversations").get<std::size_t>();

  ScriptedBackend backend = ScriptedBackend::from_file(script_path);
  const Index index = build_index(corpus_path);
  EpisodeConfig config;
  Trajectory traj = run_episode(question, backend, index, config, prompts, counter);

  ReplayResult result;
  if (traj.status != TrajectoryStatus::Answered)
    result.fail(std::string("episode ended ") + to_string(traj.status) + " instead of answered");
  if (traj.conversations.size() != expected_conversations)
    result.fail("expected " + std::to_string(expected_conversations) + " conversations, got " +
                std::to_string(traj.conversations.size()));

  for (std::size_t j = 0; j < expected_memories.size(); ++j) {
    if (j >= traj.conversations.size()) {
      result.fail("turn " + std::to_string(j + 1) + " missing from the replayed trajectory");
      continue;
    }
    const auto& memory_out = traj.conversations[j].memory_out;
    if (!memory_out.has_value()) {
      result.fail("turn " + std::to_string(j + 1) + " produced no memory");
    } else if (memory_out->text != expected_memories[j]) {
      result.fail("turn " + std::to_string(j + 1) + " memory does not match the recorded text");
    }
  }

  if (!traj.final_answer.has_value() || *traj.final_answer != expected_answer)
    result.fail("final answer '" + traj.final_answer.value_or("") + "' does not match '" +
                expected_answer + "'");

  const RewardBreakdown reward = compute_reward(traj, golds);
  if (reward.reward != 1.0)
    result.fail("reward " + std::to_string(reward.reward) + " instead of 1.0");
  return result;
}

}  // namespace memsearch
