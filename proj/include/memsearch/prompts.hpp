#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "memsearch/hash.hpp"

// Fixed instruction templates for the three request kinds. The repo ships
// them as files under prompts/; builtin() embeds identical text so the
// library works without a data directory. The set's fingerprint is stamped
// into every trajectory, which pins runs to the exact wording they used.
// `{tool_name}` and `{memory_budget}` are substituted at render time.

namespace memsearch {

namespace prompt_text {

inline constexpr std::string_view kActSystem =
    R"(You are a research assistant that answers questions by searching a knowledge base.

Each turn you receive the user's question between <question> and </question> and your current memory between <memory> and </memory>. The memory is your only record of previous turns.

First reason inside a single <think> ... </think> block. Then take exactly one action:
- To search, emit <tool_call> {"name": "{tool_name}", "arguments": {"query": "your query"}} </tool_call> and nothing after it.
- To answer, write the final answer inside \boxed{...}.

Never emit both a tool call and a boxed answer in the same turn.
)";

inline constexpr std::string_view kMemoryUpdate =
    R"(Update your memory. Read the tool response above and rewrite the memory so that it keeps every detail from the previous memory that is still relevant to the question and adds any new information from the response that helps answer it. Write the updated memory in plain language between <memory> and </memory>, and output nothing else. The memory must stay under {memory_budget} tokens.
)";

inline constexpr std::string_view kReactSystem =
    R"(You are a research assistant that answers questions by searching a knowledge base.

Each turn the conversation holds the user's question followed by every thought, tool call, and tool response from all of the previous turns, so the history stays in view.

First reason inside a single <think> ... </think> block. Then take exactly one action:
- To search, emit <tool_call> {"name": "{tool_name}", "arguments": {"query": "your query"}} </tool_call> and nothing after it.
- To answer, write the final answer inside \boxed{...}.

Never emit both a tool call and a boxed answer in the same turn.
)";

}  // namespace prompt_text

inline std::string replace_all(std::string text, std::string_view needle, std::string_view value) {
  for (std::size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + value.size())) {
    text.replace(pos, needle.size(), value);
  }
  return text;
}

struct PromptSet {
  std::string act_system;
  std::string memory_update;
  std::string react_system;

  static PromptSet builtin() {
    return PromptSet{std::string(prompt_text::kActSystem),
                     std::string(prompt_text::kMemoryUpdate),
                     std::string(prompt_text::kReactSystem)};
  }

  // Loads act_system.txt, memory_update.txt, react_system.txt from a directory.
  static PromptSet load_dir(const std::string& dir) {
    auto read = [&](const char* name) {
      std::ifstream in(dir + "/" + name, std::ios::binary);
      if (!in) throw std::runtime_error("cannot open prompt file: " + dir + "/" + name);
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    return PromptSet{read("act_system.txt"), read("memory_update.txt"), read("react_system.txt")};
  }

  // Fingerprint over the raw (pre-substitution) template text.
  std::string hash() const {
    std::uint64_t h = fnv1a64(act_system);
    h = fnv1a64(memory_update) ^ (h * 0x9e3779b97f4a7c15ull);
    h = fnv1a64(react_system) ^ (h * 0x9e3779b97f4a7c15ull);
    return to_hex(h);
  }

  std::string render_act_system(std::string_view tool_name) const {
    return replace_all(act_system, "{tool_name}", tool_name);
  }
  std::string render_react_system(std::string_view tool_name) const {
    return replace_all(react_system, "{tool_name}", tool_name);
  }
  std::string render_memory_update(std::size_t memory_budget) const {
    return replace_all(memory_update, "{memory_budget}", std::to_string(memory_budget));
  }
};

}  // namespace memsearch
