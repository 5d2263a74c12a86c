#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "memsearch/agent.hpp"
#include "memsearch/backend.hpp"
#include "memsearch/config.hpp"
#include "memsearch/eval.hpp"
#include "memsearch/grpo.hpp"
#include "memsearch/protocol.hpp"
#include "memsearch/retrieval.hpp"
#include "memsearch/reward.hpp"

namespace {

using namespace memsearch;

Index open_index(const std::string& index_path, const std::string& corpus_path) {
  if (index_path.empty() == corpus_path.empty()) {
    throw std::invalid_argument("provide exactly one of --index or --corpus");
  }
  if (!index_path.empty()) {
    return Index::load(index_path);
  }
  return build_index(corpus_path);
}

std::vector<std::string> read_question_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open questions file: " + path);
  }
  std::vector<std::string> questions;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    if (contains_reserved_tag(line)) {
      throw std::invalid_argument(path + ": question contains a reserved tag: " + line);
    }
    questions.push_back(line);
  }
  return questions;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bounded-memory search agent runtime"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "run configuration JSON file");
  std::optional<std::int64_t> seed_override;
  app.add_option("--seed", seed_override, "override the base episode seed");
  std::optional<std::size_t> workers_override;
  app.add_option("--workers", workers_override, "override the eval worker count");

  auto* cmd_index = app.add_subcommand("index", "build a search index from a JSONL corpus");
  std::string index_corpus;
  std::string index_out;
  cmd_index->add_option("--corpus", index_corpus, "corpus JSONL file")->required();
  cmd_index->add_option("--out", index_out, "index output path")->required();

  auto* cmd_eval = app.add_subcommand("eval", "run one greedy episode per dataset item");
  std::string eval_dataset;
  std::string eval_index;
  std::string eval_corpus;
  std::string eval_out;
  std::string eval_mode;
  std::optional<double> eval_temperature;
  cmd_eval->add_option("--dataset", eval_dataset, "dataset JSONL file")->required();
  cmd_eval->add_option("--index", eval_index, "saved index file");
  cmd_eval->add_option("--corpus", eval_corpus, "corpus JSONL file");
  cmd_eval->add_option("--out", eval_out, "report JSON output path")->required();
  cmd_eval->add_option("--mode", eval_mode, "memsearcher or react");
  cmd_eval->add_option("--temperature", eval_temperature, "decoding temperature, default 0");

  auto* cmd_rollout = app.add_subcommand("rollout-group", "sample a trajectory group for one question");
  std::string rollout_question;
  std::vector<std::string> rollout_golds;
  std::string rollout_index;
  std::string rollout_corpus;
  std::string rollout_out;
  std::optional<std::size_t> rollout_group_size;
  cmd_rollout->add_option("--question", rollout_question, "question text")->required();
  cmd_rollout->add_option("--gold", rollout_golds, "gold answer, repeatable")->required();
  cmd_rollout->add_option("--group-size", rollout_group_size, "trajectories per group");
  cmd_rollout->add_option("--index", rollout_index, "saved index file");
  cmd_rollout->add_option("--corpus", rollout_corpus, "corpus JSONL file");
  cmd_rollout->add_option("--out", rollout_out, "group JSON output path")->required();

  auto* cmd_export = app.add_subcommand("export-batch", "write per-conversation training records for a group");
  std::string export_group;
  std::string export_out;
  cmd_export->add_option("--group", export_group, "group JSON file from rollout-group")->required();
  cmd_export->add_option("--out", export_out, "batch JSONL output path")->required();

  auto* cmd_compare = app.add_subcommand("compare-context", "per-turn context size for both agent modes");
  std::string compare_questions;
  std::string compare_index;
  std::string compare_corpus;
  std::string compare_out;
  std::optional<std::size_t> compare_max_turns;
  cmd_compare->add_option("--questions", compare_questions, "file with one question per line")->required();
  cmd_compare->add_option("--index", compare_index, "saved index file");
  cmd_compare->add_option("--corpus", compare_corpus, "corpus JSONL file");
  cmd_compare->add_option("--out", compare_out, "telemetry CSV output path")->required();
  cmd_compare->add_option("--max-turns", compare_max_turns, "turn cap for both modes");

  auto* cmd_replay = app.add_subcommand("replay-case", "replay a recorded episode fixture and verify it");
  std::string replay_fixture;
  cmd_replay->add_option("--fixture", replay_fixture, "fixture JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed_override) {
      cfg.episode.seed = *seed_override;
    }
    if (workers_override) {
      if (*workers_override < 1) {
        throw std::invalid_argument("workers must be at least 1");
      }
      cfg.workers = *workers_override;
    }
    cfg.episode.validate();
    cfg.train.validate();
    const PromptSet prompts = cfg.prompts();

    if (*cmd_index) {
      Index index = build_index(index_corpus);
      index.save(index_out);
      std::cout << "indexed " << index.size() << " documents\n";
      return 0;
    }

    if (*cmd_eval) {
      auto items = load_dataset(eval_dataset);
      Index index = open_index(eval_index, eval_corpus);
      auto backend = make_backend(cfg.backend);
      EpisodeConfig episode = cfg.episode;
      if (!eval_mode.empty()) {
        episode.mode = agent_mode_from_string(eval_mode);
      }
      episode.temperature = eval_temperature.value_or(0.0);
      const std::string name = std::filesystem::path(eval_dataset).filename().string();
      EvalReport report = run_eval(items, name, *backend, index, episode, prompts, cfg.workers);
      write_report(eval_out, report);
      std::cout << "items " << report.item_count << " em_mean " << report.em_mean << " f1_mean "
                << report.f1_mean << "\n";
      return 0;
    }

    if (*cmd_rollout) {
      Index index = open_index(rollout_index, rollout_corpus);
      auto backend = make_backend(cfg.backend);
      const std::size_t group_size = rollout_group_size.value_or(cfg.group_size);
      auto outcomes = run_group(rollout_question, group_size, *backend, index, cfg.episode, prompts);
      std::vector<Trajectory> trajectories;
      trajectories.reserve(outcomes.size());
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (!outcomes[i].ok()) {
          std::cerr << "episode " << i << " failed: " << outcomes[i].error << "\n";
          return 1;
        }
        trajectories.push_back(std::move(*outcomes[i].trajectory));
      }
      GroupBatch group =
          make_group_batch(rollout_question, std::move(trajectories), rollout_golds, cfg.train.std_floor);
      nlohmann::ordered_json j = group_to_json(group);
      j["golden_answers"] = rollout_golds;
      std::ofstream out(rollout_out, std::ios::binary);
      if (!out) {
        throw std::runtime_error("cannot open for writing: " + rollout_out);
      }
      out << j.dump(1) << "\n";
      std::cout << "group " << group.group_id << " with " << group.trajectories.size()
                << " trajectories\n";
      return 0;
    }

    if (*cmd_export) {
      std::ifstream in(export_group, std::ios::binary);
      if (!in) {
        throw std::runtime_error("cannot open group file: " + export_group);
      }
      nlohmann::ordered_json j = nlohmann::ordered_json::parse(in, nullptr, false);
      if (j.is_discarded()) {
        throw std::runtime_error(export_group + ": malformed group file");
      }
      GroupBatch group = group_from_json(j);
      export_training_batch(group, cfg.episode, prompts, export_out);
      std::size_t records = 0;
      for (const auto& trajectory : group.trajectories) {
        records += trajectory.conversations.size();
      }
      std::cout << "wrote " << records << " records\n";
      return 0;
    }

    if (*cmd_compare) {
      if (cfg.backend.type != "scripted") {
        throw std::invalid_argument(
            "compare-context needs the scripted backend so both modes see identical turns");
      }
      auto questions = read_question_lines(compare_questions);
      ScriptedBackend backend = ScriptedBackend::from_file(cfg.backend.script);
      Index index = open_index(compare_index, compare_corpus);
      EpisodeConfig episode = cfg.episode;
      if (compare_max_turns) {
        episode.max_turns = *compare_max_turns;
        episode.validate();
      }
      ContextTelemetry telemetry = compare_context(questions, backend, index, episode, prompts);
      write_telemetry_csv(compare_out, telemetry);
      std::cout << "wrote " << telemetry.max_turns << " turn rows\n";
      return 0;
    }

    if (*cmd_replay) {
      ReplayResult result = replay_case(replay_fixture, prompts);
      if (result.ok) {
        std::cout << "replay ok\n";
        return 0;
      }
      for (const auto& failure : result.failures) {
        std::cerr << "replay mismatch: " << failure << "\n";
      }
      return 1;
    }

    return 2;
  } catch (const PromptHashMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
