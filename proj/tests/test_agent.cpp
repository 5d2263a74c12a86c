#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "memsearch/agent.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

using namespace memsearch;
using testutil::act_answer;
using testutil::act_search;
using testutil::memory_output;

namespace {

std::size_t expected_act_context(const std::string& question, const std::string& memory,
                                 const EpisodeConfig& config = {}) {
  const auto prompts = PromptSet::builtin();
  return oracle::word_count(prompts.render_act_system(config.tool_name)) +
         oracle::word_count(render_context(question, memory));
}

}  // namespace

TEST_CASE("episode config validation") {
  EpisodeConfig config;
  CHECK_NOTHROW(config.validate());

  EpisodeConfig bad = config;
  bad.max_turns = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = config;
  bad.retrieval_k = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = config;
  bad.max_new_tokens = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = config;
  bad.memory_budget = bad.context_window;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("agent mode names round trip") {
  CHECK(agent_mode_from_string("memsearcher") == AgentMode::MemSearcher);
  CHECK(agent_mode_from_string("react") == AgentMode::ReAct);
  CHECK_THROWS_AS(agent_mode_from_string("other"), std::invalid_argument);
  CHECK(trajectory_status_from_string("answered") == TrajectoryStatus::Answered);
  CHECK(trajectory_status_from_string("truncated") == TrajectoryStatus::Truncated);
  CHECK(trajectory_status_from_string("format_failed") == TrajectoryStatus::FormatFailed);
}

TEST_CASE("three turn episode carries memory between turns") {
  testutil::ThreeTurnScript script;
  auto backend = script.backend();
  auto index = testutil::small_index();
  EpisodeConfig config;

  Trajectory traj = run_episode(script.question, backend, index, config);

  CHECK(traj.status == TrajectoryStatus::Answered);
  REQUIRE(traj.final_answer.has_value());
  CHECK(*traj.final_answer == script.answer);
  REQUIRE(traj.conversations.size() == 3);
  CHECK(traj.prompt_hash == PromptSet::builtin().hash());
  CHECK(conversation_shapes_ok(traj));

  const auto& c1 = traj.conversations[0];
  const auto& c2 = traj.conversations[1];
  const auto& c3 = traj.conversations[2];

  CHECK(c1.memory_in.is_empty());
  REQUIRE(c1.memory_out.has_value());
  CHECK(c1.memory_out->text == script.memory1);
  CHECK(c1.assistant_text == act_search("alpha"));
  CHECK(c1.thought == "need another lookup");
  REQUIRE(c1.observation.has_value());
  REQUIRE(c1.observation->size() == 1);
  CHECK((*c1.observation)[0].id == "alpha");
  REQUIRE(c1.memory_update_text.has_value());
  CHECK(*c1.memory_update_text == memory_output(script.memory1));

  CHECK(c2.memory_in.text == script.memory1);
  REQUIRE(c2.memory_out.has_value());
  CHECK(c2.memory_out->text == script.memory2);

  CHECK(c3.memory_in.text == script.memory2);
  CHECK_FALSE(c3.observation.has_value());
  CHECK_FALSE(c3.memory_out.has_value());
  CHECK_FALSE(c3.memory_update_text.has_value());
  REQUIRE(is_final(c3.action));

  REQUIRE(traj.per_turn_context_tokens.size() == 3);
  CHECK(traj.per_turn_context_tokens[0] == expected_act_context(script.question, ""));
  CHECK(traj.per_turn_context_tokens[1] == expected_act_context(script.question, script.memory1));
  CHECK(traj.per_turn_context_tokens[2] == expected_act_context(script.question, script.memory2));
}

TEST_CASE("acting context stays within the budget bound") {
  testutil::ThreeTurnScript script;
  auto backend = script.backend();
  auto index = testutil::small_index();
  EpisodeConfig config;

  Trajectory traj = run_episode(script.question, backend, index, config);
  const std::size_t bound = oracle::word_count(script.question) + config.memory_budget +
                            template_overhead(config);
  for (std::size_t tokens : traj.per_turn_context_tokens) CHECK(tokens <= bound);

  const auto prompts = PromptSet::builtin();
  CHECK(template_overhead(config) ==
        oracle::word_count(prompts.render_act_system(config.tool_name)) + 2);
}

TEST_CASE("immediate answer ends the episode in one conversation") {
  const std::string question = "what is two plus two?";
  ScriptedBackend backend;
  backend.add_entry({question, 1, Phase::Act, act_answer("four")});
  auto index = testutil::small_index();

  Trajectory traj = run_episode(question, backend, index, EpisodeConfig{});
  CHECK(traj.status == TrajectoryStatus::Answered);
  CHECK(traj.conversations.size() == 1);
  CHECK(traj.per_turn_context_tokens.size() == 1);
  CHECK(*traj.final_answer == "four");
}

TEST_CASE("turn cap truncates an episode that keeps searching") {
  testutil::ThreeTurnScript script;
  auto backend = script.backend();
  auto index = testutil::small_index();
  EpisodeConfig config;
  config.max_turns = 2;

  Trajectory traj = run_episode(script.question, backend, index, config);
  CHECK(traj.status == TrajectoryStatus::Truncated);
  CHECK(traj.conversations.size() == 2);
  CHECK(traj.per_turn_context_tokens.size() == 2);
  CHECK_FALSE(traj.final_answer.has_value());
  CHECK(conversation_shapes_ok(traj));
}

TEST_CASE("acting format failure is recorded with turn and phase") {
  testutil::ThreeTurnScript script;
  ScriptedBackend backend;
  backend.add_entry({script.question, 1, Phase::Act, act_search("alpha")});
  backend.add_entry({script.question, 1, Phase::Memory, memory_output(script.memory1)});
  backend.add_entry({script.question, 2, Phase::Act, "<think> broken"});
  auto index = testutil::small_index();

  Trajectory traj = run_episode(script.question, backend, index, EpisodeConfig{});
  CHECK(traj.status == TrajectoryStatus::FormatFailed);
  CHECK(traj.conversations.size() == 1);
  CHECK(traj.per_turn_context_tokens.size() == 1);
  REQUIRE(traj.failure.has_value());
  CHECK(traj.failure->kind == FormatErrorKind::UnclosedTag);
  CHECK(traj.failure->turn == 2);
  CHECK(traj.failure->phase == Phase::Act);
  CHECK(conversation_shapes_ok(traj));
}

TEST_CASE("memory format failure is recorded with the memory phase") {
  const std::string question = "where did the fox den?";
  ScriptedBackend backend;
  backend.add_entry({question, 1, Phase::Act, act_search("alpha")});
  backend.add_entry({question, 1, Phase::Memory, "forgot the tags entirely"});
  auto index = testutil::small_index();

  Trajectory traj = run_episode(question, backend, index, EpisodeConfig{});
  CHECK(traj.status == TrajectoryStatus::FormatFailed);
  CHECK(traj.conversations.empty());
  CHECK(traj.per_turn_context_tokens.empty());
  REQUIRE(traj.failure.has_value());
  CHECK(traj.failure->kind == FormatErrorKind::MissingMemoryBlock);
  CHECK(traj.failure->turn == 1);
  CHECK(traj.failure->phase == Phase::Memory);
}

TEST_CASE("a scripted tool name outside the allowlist fails the turn") {
  const std::string question = "which tool is this?";
  ScriptedBackend backend;
  backend.add_entry({question, 1, Phase::Act, act_search("alpha", "other_search")});
  auto index = testutil::small_index();

  Trajectory traj = run_episode(question, backend, index, EpisodeConfig{});
  CHECK(traj.status == TrajectoryStatus::FormatFailed);
  CHECK(traj.failure->kind == FormatErrorKind::UnknownTool);
}

TEST_CASE("over-budget memory updates are truncated before the next turn") {
  const std::string question = "how many facts fit?";
  const std::string long_memory = "m1 m2 m3 m4 m5 m6 m7 m8 m9";
  ScriptedBackend backend;
  backend.add_entry({question, 1, Phase::Act, act_search("alpha")});
  backend.add_entry({question, 1, Phase::Memory, memory_output(long_memory)});
  backend.add_entry({question, 2, Phase::Act, act_answer("five")});
  auto index = testutil::small_index();

  EpisodeConfig config;
  config.memory_budget = 5;

  Trajectory traj = run_episode(question, backend, index, config);
  REQUIRE(traj.status == TrajectoryStatus::Answered);
  REQUIRE(traj.conversations.size() == 2);
  const auto& memory_out = traj.conversations[0].memory_out;
  REQUIRE(memory_out.has_value());
  CHECK(memory_out->truncated);
  CHECK(memory_out->token_count == 5);
  CHECK(memory_out->text == "m1 m2 m3 m4 m5");
  CHECK(traj.conversations[1].memory_in.text == "m1 m2 m3 m4 m5");
  CHECK(traj.per_turn_context_tokens[1] == expected_act_context(question, "m1 m2 m3 m4 m5"));
}

TEST_CASE("searches with no hits still produce a well-formed observation") {
  const std::string question = "is there anything about xylophones?";
  ScriptedBackend backend;
  backend.add_entry({question, 1, Phase::Act, act_search("xylophone")});
  backend.add_entry({question, 1, Phase::Memory, memory_output("nothing found yet")});
  backend.add_entry({question, 2, Phase::Act, act_answer("no")});
  auto index = testutil::small_index();

  Trajectory traj = run_episode(question, backend, index, EpisodeConfig{});
  REQUIRE(traj.status == TrajectoryStatus::Answered);
  REQUIRE(traj.conversations[0].observation.has_value());
  CHECK(traj.conversations[0].observation->empty());
  CHECK(observation_text(*traj.conversations[0].observation) ==
        "<tool_response>\nNo results found.\n</tool_response>");
}

TEST_CASE("mode guards reject the wrong runner") {
  testutil::ThreeTurnScript script;
  auto backend = script.backend();
  auto index = testutil::small_index();

  EpisodeConfig react;
  react.mode = AgentMode::ReAct;
  CHECK_THROWS_AS(run_episode(script.question, backend, index, react), std::invalid_argument);

  EpisodeConfig mem;
  CHECK_THROWS_AS(run_episode_react(script.question, backend, index, mem), std::invalid_argument);
}

TEST_CASE("react context accumulates and grows linearly for fixed-size turns") {
  testutil::ThreeTurnScript script;
  auto backend = script.backend();
  auto index = testutil::small_index();
  EpisodeConfig config;
  config.mode = AgentMode::ReAct;

  Trajectory traj = run_episode_react(script.question, backend, index, config);
  CHECK(traj.status == TrajectoryStatus::Answered);
  CHECK(*traj.final_answer == script.answer);
  REQUIRE(traj.conversations.size() == 3);
  REQUIRE(traj.per_turn_context_tokens.size() == 3);
  CHECK(conversation_shapes_ok(traj));
  for (const auto& c : traj.conversations) CHECK_FALSE(c.memory_out.has_value());

  const auto& tokens = traj.per_turn_context_tokens;
  CHECK(tokens[0] < tokens[1]);
  CHECK(tokens[1] < tokens[2]);
  // both searches add an identically sized act output and observation
  CHECK(tokens[1] - tokens[0] == tokens[2] - tokens[1]);

  const auto prompts = PromptSet::builtin();
  CHECK(tokens[0] == oracle::word_count(prompts.render_react_system(config.tool_name)) +
                         oracle::word_count(script.question));
}

TEST_CASE("react aborts before acting once the window is exceeded") {
  testutil::ThreeTurnScript script;
  auto index = testutil::small_index();
  EpisodeConfig config;
  config.mode = AgentMode::ReAct;
  config.memory_budget = 1;

  auto probe_backend = script.backend();
  Trajectory full = run_episode_react(script.question, probe_backend, index, config);
  REQUIRE(full.per_turn_context_tokens.size() == 3);

  config.context_window = full.per_turn_context_tokens[2] - 1;
  auto backend = script.backend();
  Trajectory traj = run_episode_react(script.question, backend, index, config);
  CHECK(traj.status == TrajectoryStatus::Truncated);
  CHECK(traj.conversations.size() == 2);
  CHECK(traj.per_turn_context_tokens.size() == 2);
  CHECK(conversation_shapes_ok(traj));

  config.context_window = full.per_turn_context_tokens[0] - 1;
  auto tiny_backend = script.backend();
  Trajectory none = run_episode_react(script.question, tiny_backend, index, config);
  CHECK(none.status == TrajectoryStatus::Truncated);
  CHECK(none.conversations.empty());
  CHECK(none.per_turn_context_tokens.empty());
}

TEST_CASE("run_group needs at least two rollouts") {
  testutil::ThreeTurnScript script;
  auto backend = script.backend();
  auto index = testutil::small_index();
  CHECK_THROWS_AS(run_group(script.question, 1, backend, index, EpisodeConfig{}),
                  std::invalid_argument);
}

TEST_CASE("run_group replays identically under the scripted backend") {
  testutil::ThreeTurnScript script;
  auto backend = script.backend();
  auto index = testutil::small_index();

  auto outcomes = run_group(script.question, 3, backend, index, EpisodeConfig{});
  REQUIRE(outcomes.size() == 3);
  for (const auto& o : outcomes) REQUIRE(o.ok());
  const std::string first = trajectory_to_json(*outcomes[0].trajectory).dump();
  CHECK(trajectory_to_json(*outcomes[1].trajectory).dump() == first);
  CHECK(trajectory_to_json(*outcomes[2].trajectory).dump() == first);
}

TEST_CASE("run_group captures per-episode errors instead of throwing") {
  ScriptedBackend empty_backend;
  auto index = testutil::small_index();

  auto outcomes = run_group("unscripted question", 2, empty_backend, index, EpisodeConfig{});
  REQUIRE(outcomes.size() == 2);
  for (const auto& o : outcomes) {
    CHECK_FALSE(o.ok());
    CHECK(o.error.find("no script entry") != std::string::npos);
  }
}

TEST_CASE("trajectory json round trips byte for byte") {
  testutil::ThreeTurnScript script;
  auto backend = script.backend();
  auto index = testutil::small_index();

  Trajectory traj = run_episode(script.question, backend, index, EpisodeConfig{});
  const std::string once = trajectory_to_json(traj).dump();
  Trajectory back = trajectory_from_json(nlohmann::ordered_json::parse(once));
  CHECK(trajectory_to_json(back).dump() == once);

  ScriptedBackend failing;
  failing.add_entry({script.question, 1, Phase::Act, "<think> broken"});
  Trajectory failed = run_episode(script.question, failing, index, EpisodeConfig{});
  const std::string failed_once = trajectory_to_json(failed).dump();
  Trajectory failed_back = trajectory_from_json(nlohmann::ordered_json::parse(failed_once));
  CHECK(trajectory_to_json(failed_back).dump() == failed_once);
  REQUIRE(failed_back.failure.has_value());
  CHECK(failed_back.failure->kind == FormatErrorKind::UnclosedTag);
}

TEST_CASE("trajectory JSONL files round trip") {
  using Catch::Matchers::ContainsSubstring;
  testutil::ThreeTurnScript script;
  auto backend = script.backend();
  auto index = testutil::small_index();

  EpisodeConfig react;
  react.mode = AgentMode::ReAct;
  auto react_backend = script.backend();

  std::vector<Trajectory> trajectories{
      run_episode(script.question, backend, index, EpisodeConfig{}),
      run_episode_react(script.question, react_backend, index, react),
  };

  const std::string path = testutil::temp_path("trajectories.jsonl");
  write_trajectories(path, trajectories);
  auto loaded = read_trajectories(path);
  REQUIRE(loaded.size() == 2);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(trajectory_to_json(loaded[i]).dump() == trajectory_to_json(trajectories[i]).dump());
  }

  const std::string broken = testutil::temp_path("trajectories.jsonl");
  testutil::spit(broken, "{\"question\": 1\nnot json\n");
  CHECK_THROWS_WITH(read_trajectories(broken), ContainsSubstring(":1"));
}

TEST_CASE("action json covers both variants") {
  Action search = SearchCall{"wikipedia_search", "a query"};
  auto js = action_to_json(search);
  CHECK(js["type"] == "search");
  auto search_back = action_from_json(js);
  CHECK(std::get<SearchCall>(search_back).query == "a query");

  Action answer = FinalAnswer{"it is four"};
  auto ja = action_to_json(answer);
  CHECK(ja["type"] == "answer");
  CHECK(std::get<FinalAnswer>(action_from_json(ja)).answer == "it is four");

  CHECK_THROWS_AS(action_from_json(nlohmann::ordered_json{{"type", "noop"}}),
                  std::invalid_argument);
}

TEST_CASE("conversation_shapes_ok flags tampered trajectories") {
  testutil::ThreeTurnScript script;
  auto backend = script.backend();
  auto index = testutil::small_index();
  Trajectory traj = run_episode(script.question, backend, index, EpisodeConfig{});
  REQUIRE(conversation_shapes_ok(traj));

  Trajectory tampered = traj;
  tampered.conversations.back().observation = std::vector<Passage>{};
  CHECK_FALSE(conversation_shapes_ok(tampered));

  tampered = traj;
  tampered.conversations[0].memory_out.reset();
  CHECK_FALSE(conversation_shapes_ok(tampered));

  tampered = traj;
  tampered.per_turn_context_tokens.pop_back();
  CHECK_FALSE(conversation_shapes_ok(tampered));

  tampered = traj;
  tampered.final_answer.reset();
  CHECK_FALSE(conversation_shapes_ok(tampered));

  auto react_backend = script.backend();
  EpisodeConfig react;
  react.mode = AgentMode::ReAct;
  Trajectory rt = run_episode_react(script.question, react_backend, index, react);
  REQUIRE(conversation_shapes_ok(rt));
  rt.conversations[0].memory_out = MemoryState::empty();
  CHECK_FALSE(conversation_shapes_ok(rt));
}

TEST_CASE("the shipped prompt files match the builtin templates") {
  const PromptSet loaded = PromptSet::load_dir(MEMSEARCH_PROMPTS_DIR);
  const PromptSet builtin = PromptSet::builtin();
  CHECK(loaded.act_system == builtin.act_system);
  CHECK(loaded.memory_update == builtin.memory_update);
  CHECK(loaded.react_system == builtin.react_system);
  CHECK(loaded.hash() == builtin.hash());
}
