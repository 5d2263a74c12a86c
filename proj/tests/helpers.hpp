#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "memsearch/agent.hpp"
#include "memsearch/backend.hpp"
#include "memsearch/retrieval.hpp"

// Shared scaffolding for the test binaries: canned assistant outputs in the
// turn grammar, a tiny in-memory corpus, and unique temp-file paths.

namespace testutil {

inline std::string act_search(const std::string& query,
                              const std::string& tool = "wikipedia_search",
                              const std::string& thought = "need another lookup") {
  return "<think> " + thought + " </think>\n<tool_call>\n{\"name\": \"" + tool +
         "\", \"arguments\": {\"query\": \"" + query + "\"}}\n</tool_call>";
}

inline std::string act_answer(const std::string& answer,
                              const std::string& thought = "enough to answer") {
  return "<think> " + thought + " </think>\nThe answer is \\boxed{" + answer + "}.";
}

inline std::string memory_output(const std::string& text) {
  return "<memory>" + text + "</memory>";
}

inline memsearch::Index small_index() {
  memsearch::Index index;
  index.add_document({"alpha", "Alpha", "alpha notes describe the first topic in detail", 0});
  index.add_document({"beta", "Beta", "beta notes describe the second topic in detail", 0});
  index.add_document({"gamma", "Gamma", "gamma notes describe the third topic in detail", 0});
  return index;
}

// Scripted three-turn episode: two searches with memory rewrites, then a
// boxed answer. Reused by the agent, reward, grpo, and eval tests.
struct ThreeTurnScript {
  std::string question = "which notes describe the second topic?";
  std::string answer = "beta notes";
  std::string memory1 = "alpha notes cover the first topic.";
  std::string memory2 = "alpha covers topic one; beta notes cover the second topic.";

  memsearch::ScriptedBackend backend() const {
    using memsearch::Phase;
    memsearch::ScriptedBackend b;
    b.add_entry({question, 1, Phase::Act, act_search("alpha")});
    b.add_entry({question, 1, Phase::Memory, memory_output(memory1)});
    b.add_entry({question, 2, Phase::Act, act_search("beta")});
    b.add_entry({question, 2, Phase::Memory, memory_output(memory2)});
    b.add_entry({question, 3, Phase::Act, act_answer(answer)});
    return b;
  }
};

inline std::string temp_path(const std::string& hint) {
  static std::atomic<unsigned> counter{0};
  const unsigned n = counter.fetch_add(1);
  auto dir = std::filesystem::temp_directory_path() / "memsearch-tests";
  std::filesystem::create_directories(dir);
  return (dir / (std::to_string(static_cast<unsigned long>(::getpid())) + "-" +
                 std::to_string(n) + "-" + hint))
      .string();
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

}  // namespace testutil
