#pragma once

#include <cassert>
#include <cctype>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

// Budget-enforced natural-language memory carried across turns. Token counts
// use a pluggable counter; the default counts maximal whitespace-delimited
// segments, a deterministic stand-in for a model tokenizer. Attaching a real
// tokenizer's counter restores exact parity with served models.

namespace memsearch {

using TokenCounter = std::function<std::size_t(std::string_view)>;

inline std::size_t whitespace_token_count(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    bool ws = std::isspace(c) != 0;
    if (!ws && !in_token) ++n;
    in_token = !ws;
  }
  return n;
}

inline TokenCounter default_token_counter() {
  return [](std::string_view s) { return whitespace_token_count(s); };
}

inline std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t b = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > b) out.push_back(text.substr(b, i - b));
  }
  return out;
}

struct MemoryState {
  std::string text;
  std::size_t token_count = 0;
  bool truncated = false;

  static MemoryState empty() { return MemoryState{}; }
  bool is_empty() const { return text.empty(); }
};

inline MemoryState make_memory_state(std::string text, const TokenCounter& counter) {
  MemoryState m;
  m.token_count = counter(text);
  m.text = std::move(text);
  return m;
}

// Under budget: text kept verbatim. Over budget: hard-truncated to the
// longest token prefix that fits, joined by single spaces, and flagged.
// Over-budget model outputs are never regenerated, only cut.
inline MemoryState enforce_budget(std::string_view text, std::size_t budget,
                                  const TokenCounter& counter = default_token_counter()) {
  assert(budget >= 1);
  std::size_t count = counter(text);
  if (count <= budget) {
    MemoryState m;
    m.text.assign(text);
    m.token_count = count;
    m.truncated = false;
    return m;
  }
  auto tokens = split_whitespace(text);
  auto join_prefix = [&](std::size_t k) {
    std::string s;
    for (std::size_t i = 0; i < k; ++i) {
      if (i) s.push_back(' ');
      s.append(tokens[i]);
    }
    return s;
  };
  // With the whitespace counter the fitting prefix is exactly `budget`
  // tokens; a custom counter may count differently, so search for it.
  std::size_t lo = 0, hi = tokens.size();
  while (lo < hi) {
    std::size_t mid = (lo + hi + 1) / 2;
    if (counter(join_prefix(mid)) <= budget) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  MemoryState m;
  m.text = join_prefix(lo);
  m.token_count = counter(m.text);
  m.truncated = true;
  return m;
}

}  // namespace memsearch
