#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include "helpers.hpp"

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args) {
  const std::string out_path = testutil::temp_path("cli-out.txt");
  const std::string err_path = testutil::temp_path("cli-err.txt");
  const std::string command = std::string(MEMSEARCH_CLI_PATH) + " " + args + " >" + out_path +
                              " 2>" + err_path;
  const int status = std::system(command.c_str());
  CliResult result;
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = testutil::slurp(out_path);
  result.err = testutil::slurp(err_path);
  return result;
}

std::string fx(const std::string& rel) {
  return std::string(MEMSEARCH_FIXTURES_DIR) + "/" + rel;
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("frobnicate").code == 2);
}

TEST_CASE("index subcommand is reproducible") {
  const std::string first = testutil::temp_path("index-a.json");
  const std::string second = testutil::temp_path("index-b.json");

  auto r1 = run_cli("index --corpus " + fx("eval/corpus.jsonl") + " --out " + first);
  REQUIRE(r1.code == 0);
  CHECK_THAT(r1.out, Catch::Matchers::ContainsSubstring("indexed 3 documents"));

  auto r2 = run_cli("index --corpus " + fx("eval/corpus.jsonl") + " --out " + second);
  REQUIRE(r2.code == 0);
  CHECK(testutil::slurp(first) == testutil::slurp(second));
}

TEST_CASE("eval runs are byte-identical and index-source agnostic") {
  const std::string config = fx("eval/config.json");
  const std::string dataset = fx("eval/dataset.jsonl");
  const std::string corpus = fx("eval/corpus.jsonl");

  const std::string r1 = testutil::temp_path("report1.json");
  const std::string r2 = testutil::temp_path("report2.json");
  const std::string r3 = testutil::temp_path("report3.json");

  auto a = run_cli("--config " + config + " eval --dataset " + dataset + " --corpus " + corpus +
                   " --out " + r1);
  REQUIRE(a.code == 0);
  CHECK_THAT(a.out, Catch::Matchers::ContainsSubstring("items 3"));

  auto b = run_cli("--config " + config + " eval --dataset " + dataset + " --corpus " + corpus +
                   " --out " + r2);
  REQUIRE(b.code == 0);
  CHECK(testutil::slurp(r1) == testutil::slurp(r2));

  const std::string index_path = testutil::temp_path("eval-index.json");
  REQUIRE(run_cli("index --corpus " + corpus + " --out " + index_path).code == 0);
  auto c = run_cli("--config " + config + " eval --dataset " + dataset + " --index " + index_path +
                   " --out " + r3);
  REQUIRE(c.code == 0);
  CHECK(testutil::slurp(r1) == testutil::slurp(r3));

  auto report = nlohmann::json::parse(testutil::slurp(r1));
  CHECK(report.at("item_count") == 3);
  CHECK(report.at("failed_items") == 0);
}

TEST_CASE("eval requires exactly one retrieval source") {
  const std::string config = fx("eval/config.json");
  const std::string dataset = fx("eval/dataset.jsonl");
  const std::string out = testutil::temp_path("report.json");

  CHECK(run_cli("--config " + config + " eval --dataset " + dataset + " --out " + out).code == 2);

  const std::string index_path = testutil::temp_path("both-index.json");
  REQUIRE(run_cli("index --corpus " + fx("eval/corpus.jsonl") + " --out " + index_path).code == 0);
  CHECK(run_cli("--config " + config + " eval --dataset " + dataset + " --corpus " +
                fx("eval/corpus.jsonl") + " --index " + index_path + " --out " + out)
            .code == 2);
}

TEST_CASE("rollout-group writes a scored group file") {
  const std::string group_path = testutil::temp_path("group.json");
  auto r = run_cli("--config " + fx("eval/config.json") +
                   " rollout-group --question 'What color is the clear daytime sky?'"
                   " --gold blue --corpus " +
                   fx("eval/corpus.jsonl") + " --out " + group_path);
  REQUIRE(r.code == 0);
  CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring("with 5 trajectories"));

  auto group = nlohmann::json::parse(testutil::slurp(group_path));
  CHECK(group.at("golden_answers") == nlohmann::json::array({"blue"}));
  REQUIRE(group.at("trajectories").size() == 5);
  for (const auto& reward : group.at("rewards")) CHECK(reward == 1.0);
  for (const auto& advantage : group.at("advantages")) CHECK(advantage == 0.0);
  const std::string first = group.at("trajectories")[0].dump();
  for (const auto& t : group.at("trajectories")) CHECK(t.dump() == first);
}

TEST_CASE("rollout-group surfaces episode failures") {
  const std::string group_path = testutil::temp_path("group-bad.json");
  auto r = run_cli("--config " + fx("eval/config.json") +
                   " rollout-group --question 'never scripted?' --gold x --corpus " +
                   fx("eval/corpus.jsonl") + " --out " + group_path);
  CHECK(r.code == 1);
  CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("episode"));
}

TEST_CASE("export-batch writes records and honors the prompt hash") {
  const std::string group_path = testutil::temp_path("group.json");
  REQUIRE(run_cli("--config " + fx("eval/config.json") +
                  " rollout-group --question 'What color is the clear daytime sky?'"
                  " --gold blue --corpus " +
                  fx("eval/corpus.jsonl") + " --out " + group_path)
              .code == 0);

  const std::string batch_path = testutil::temp_path("batch.jsonl");
  auto r = run_cli("export-batch --group " + group_path + " --out " + batch_path);
  REQUIRE(r.code == 0);
  CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring("wrote 10 records"));

  auto group = nlohmann::json::parse(testutil::slurp(group_path));
  group["trajectories"][0]["prompt_hash"] = "0000000000000000";
  const std::string tampered = testutil::temp_path("group-tampered.json");
  testutil::spit(tampered, group.dump());
  auto bad = run_cli("export-batch --group " + tampered + " --out " + batch_path);
  CHECK(bad.code == 1);
  CHECK_THAT(bad.err, Catch::Matchers::ContainsSubstring("prompt"));
}

TEST_CASE("compare-context needs the scripted backend") {
  const std::string csv_path = testutil::temp_path("telemetry.csv");
  auto r = run_cli("--config " + fx("eval/config.json") + " compare-context --questions " +
                   fx("eval/questions.txt") + " --corpus " + fx("eval/corpus.jsonl") + " --out " +
                   csv_path);
  REQUIRE(r.code == 0);
  CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring("wrote 8 turn rows"));
  CHECK(testutil::slurp(csv_path).rfind(
            "turn,memsearcher_mean_context_tokens,react_mean_context_tokens\n", 0) == 0);

  const std::string http_config = testutil::temp_path("http-config.json");
  testutil::spit(http_config,
                 "{\"backend\": {\"type\": \"http\", \"base_url\": \"http://127.0.0.1:1/v1\"}}");
  auto refused = run_cli("--config " + http_config + " compare-context --questions " +
                         fx("eval/questions.txt") + " --corpus " + fx("eval/corpus.jsonl") +
                         " --out " + csv_path);
  CHECK(refused.code == 2);
  CHECK_THAT(refused.err, Catch::Matchers::ContainsSubstring("scripted"));
}

TEST_CASE("replay-case distinguishes pass, mismatch, and missing input") {
  auto ok = run_cli("replay-case --fixture " + fx("case_study/fixture.json"));
  CHECK(ok.code == 0);
  CHECK_THAT(ok.out, Catch::Matchers::ContainsSubstring("replay ok"));

  namespace fsys = std::filesystem;
  const fsys::path dir = testutil::temp_path("cli-replay");
  fsys::create_directories(dir);
  fsys::copy_file(fx("case_study/script.jsonl"), dir / "script.jsonl");
  fsys::copy_file(fx("case_study/corpus.jsonl"), dir / "corpus.jsonl");
  auto fixture = nlohmann::json::parse(testutil::slurp(fx("case_study/fixture.json")));
  fixture["expected_answer"] = "Old Church Slavonic";
  testutil::spit((dir / "fixture.json").string(), fixture.dump());

  auto mismatch = run_cli("replay-case --fixture " + (dir / "fixture.json").string());
  CHECK(mismatch.code == 1);
  CHECK_THAT(mismatch.err, Catch::Matchers::ContainsSubstring("replay mismatch"));

  CHECK(run_cli("replay-case --fixture " + fx("case_study/absent.json")).code == 2);
}

TEST_CASE("a config with unknown keys is rejected") {
  const std::string bad_config = testutil::temp_path("bad-config.json");
  testutil::spit(bad_config, "{\"bogus\": 1}");
  auto r = run_cli("--config " + bad_config + " replay-case --fixture " +
                   fx("case_study/fixture.json"));
  CHECK(r.code == 2);
}
