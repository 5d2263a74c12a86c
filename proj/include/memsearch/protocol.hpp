#pragma once

#include <algorithm>
#include <cassert>
#include <cctype>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

// Tagged turn grammar shared by the memory-based and history-based agent
// modes. One assistant acting turn is
//
//   <think> ... </think>
//   <tool_call> {"name": "...", "arguments": {"query": "..."}} </tool_call>
//
// or, for the terminal turn, a \boxed{...} answer instead of the tool call.
// The acting context is rendered as
//
//   <question>...</question>
//   <memory>...</memory>
//
// and search results come back inside <tool_response> ... </tool_response>.
// All parse functions here are pure and stateless.

namespace memsearch {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kToolCallOpen = "<tool_call>";
inline constexpr std::string_view kToolCallClose = "</tool_call>";
inline constexpr std::string_view kToolResponseOpen = "<tool_response>";
inline constexpr std::string_view kToolResponseClose = "</tool_response>";
inline constexpr std::string_view kQuestionOpen = "<question>";
inline constexpr std::string_view kQuestionClose = "</question>";
inline constexpr std::string_view kMemoryOpen = "<memory>";
inline constexpr std::string_view kMemoryClose = "</memory>";
inline constexpr std::string_view kBoxedOpen = "\\boxed{";

// Every tag with structural meaning. Content fed to the runtime (corpus
// passages, dataset questions) must not contain any of these; there is no
// escaping scheme, so such inputs are rejected at ingestion.
inline const std::vector<std::string_view>& reserved_tags() {
  static const std::vector<std::string_view> tags = {
      kThinkOpen,        kThinkClose,        kToolCallOpen, kToolCallClose,
      kToolResponseOpen, kToolResponseClose, kQuestionOpen, kQuestionClose,
      kMemoryOpen,       kMemoryClose,       kBoxedOpen,
  };
  return tags;
}

inline bool contains_reserved_tag(std::string_view text) {
  for (auto tag : reserved_tags()) {
    if (text.find(tag) != std::string_view::npos) return true;
  }
  return false;
}

enum class FormatErrorKind {
  MissingThink,
  MultipleThink,
  NoAction,
  BothActions,
  MalformedToolJson,
  UnknownTool,
  MissingMemoryBlock,
  UnclosedTag,
};

inline const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::MissingThink: return "missing_think";
    case FormatErrorKind::MultipleThink: return "multiple_think";
    case FormatErrorKind::NoAction: return "no_action";
    case FormatErrorKind::BothActions: return "both_actions";
    case FormatErrorKind::MalformedToolJson: return "malformed_tool_json";
    case FormatErrorKind::UnknownTool: return "unknown_tool";
    case FormatErrorKind::MissingMemoryBlock: return "missing_memory_block";
    case FormatErrorKind::UnclosedTag: return "unclosed_tag";
  }
  return "unknown";
}

inline FormatErrorKind format_error_kind_from_string(std::string_view s) {
  for (auto kind : {FormatErrorKind::MissingThink, FormatErrorKind::MultipleThink,
                    FormatErrorKind::NoAction, FormatErrorKind::BothActions,
                    FormatErrorKind::MalformedToolJson, FormatErrorKind::UnknownTool,
                    FormatErrorKind::MissingMemoryBlock, FormatErrorKind::UnclosedTag}) {
    if (s == to_string(kind)) return kind;
  }
  throw std::invalid_argument("unknown format error kind: " + std::string(s));
}

struct FormatError {
  FormatErrorKind kind;
  std::string detail;
};

// Parse outcome: either a value or the format violation that prevented one.
// Format violations are ordinary data (they feed the reward), not exceptions.
template <typename T>
class ParseResult {
 public:
  ParseResult(T value) : v_(std::move(value)) {}
  ParseResult(FormatError err) : v_(std::move(err)) {}

  bool ok() const { return std::holds_alternative<T>(v_); }
  explicit operator bool() const { return ok(); }

  const T& value() const {
    assert(ok());
    return std::get<T>(v_);
  }
  T& value() {
    assert(ok());
    return std::get<T>(v_);
  }
  const FormatError& error() const {
    assert(!ok());
    return std::get<FormatError>(v_);
  }

 private:
  std::variant<T, FormatError> v_;
};

struct SearchCall {
  std::string tool_name;
  std::string query;  // non-empty after trimming
};

struct FinalAnswer {
  std::string answer;  // content of the last \boxed{...}
};

using Action = std::variant<SearchCall, FinalAnswer>;

inline bool is_final(const Action& a) { return std::holds_alternative<FinalAnswer>(a); }

struct ParsedTurn {
  std::string thought;
  Action action;
  std::vector<std::string> warnings;  // e.g. ignored extra tool arguments
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string_view::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// Span of the balanced-brace body following kBoxedOpen at `open`, or npos on
// an unterminated brace.
inline std::size_t boxed_body_end(std::string_view text, std::size_t open) {
  int depth = 1;
  for (std::size_t i = open + kBoxedOpen.size(); i < text.size(); ++i) {
    if (text[i] == '{') ++depth;
    if (text[i] == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

}  // namespace detail

// Content of the last \boxed{...} in `raw`, with balanced-brace matching.
inline ParseResult<std::string> extract_boxed(std::string_view raw) {
  std::size_t open = raw.rfind(kBoxedOpen);
  if (open == std::string_view::npos) {
    return FormatError{FormatErrorKind::NoAction, "no \\boxed{...} span"};
  }
  std::size_t close = detail::boxed_body_end(raw, open);
  if (close == std::string_view::npos) {
    return FormatError{FormatErrorKind::UnclosedTag, "unterminated \\boxed{"};
  }
  std::size_t body = open + kBoxedOpen.size();
  return std::string(raw.substr(body, close - body));
}

// Content between the first <memory> and its matching </memory>. Empty
// content is legal (the memory before the first turn is empty).
inline ParseResult<std::string> parse_memory_block(std::string_view raw) {
  std::size_t open = raw.find(kMemoryOpen);
  if (open == std::string_view::npos) {
    return FormatError{FormatErrorKind::MissingMemoryBlock, "no <memory> tag"};
  }
  std::size_t body = open + kMemoryOpen.size();
  std::size_t close = raw.find(kMemoryClose, body);
  if (close == std::string_view::npos) {
    return FormatError{FormatErrorKind::MissingMemoryBlock, "<memory> tag never closed"};
  }
  return std::string(raw.substr(body, close - body));
}

// Full assistant generation for one acting phase -> thought + exactly one
// action. Structural rules, checked in this order:
//   1. exactly one <think>...</think> span;
//   2. exactly one action outside it: a <tool_call> block XOR a boxed answer
//      (several boxed spans count as one answer, the last box wins);
//   3. tool payload is a JSON object {"name": ..., "arguments": {"query": ...}}
//      with a known name and a non-empty query (extra argument keys are
//      ignored with a warning);
//   4. no reserved tag text may remain outside the extracted spans.
inline ParseResult<ParsedTurn> parse_assistant_turn(std::string_view raw,
                                                    const std::set<std::string>& allowed_tools) {
  using detail::count_occurrences;

  std::size_t think_opens = count_occurrences(raw, kThinkOpen);
  std::size_t think_closes = count_occurrences(raw, kThinkClose);
  if (think_opens == 0) {
    return FormatError{FormatErrorKind::MissingThink, "no <think> tag"};
  }
  if (think_opens > 1 || think_closes > 1) {
    return FormatError{FormatErrorKind::MultipleThink, "more than one think tag"};
  }
  std::size_t topen = raw.find(kThinkOpen);
  std::size_t tclose = raw.find(kThinkClose);
  if (tclose == std::string_view::npos || tclose < topen) {
    return FormatError{FormatErrorKind::UnclosedTag, "<think> tag never closed"};
  }
  std::string thought(detail::trim(raw.substr(topen + kThinkOpen.size(),
                                              tclose - topen - kThinkOpen.size())));

  // Everything outside the think span is where the action must live.
  std::string outside;
  outside.append(raw.substr(0, topen));
  outside.append(raw.substr(tclose + kThinkClose.size()));

  std::size_t call_opens = count_occurrences(outside, kToolCallOpen);
  bool has_boxed = outside.find(kBoxedOpen) != std::string::npos;

  if (call_opens == 0 && !has_boxed) {
    return FormatError{FormatErrorKind::NoAction, "neither tool call nor boxed answer"};
  }
  if (call_opens > 0 && has_boxed) {
    return FormatError{FormatErrorKind::BothActions, "tool call and boxed answer in one turn"};
  }
  if (call_opens > 1) {
    return FormatError{FormatErrorKind::BothActions, "more than one tool call"};
  }

  ParsedTurn turn;
  turn.thought = std::move(thought);
  std::string remainder;

  if (call_opens == 1) {
    std::size_t copen = outside.find(kToolCallOpen);
    std::size_t body = copen + kToolCallOpen.size();
    std::size_t cclose = outside.find(kToolCallClose, body);
    if (cclose == std::string::npos) {
      return FormatError{FormatErrorKind::UnclosedTag, "<tool_call> tag never closed"};
    }
    std::string payload(detail::trim(std::string_view(outside).substr(body, cclose - body)));

    nlohmann::json doc = nlohmann::json::parse(payload, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
      return FormatError{FormatErrorKind::MalformedToolJson, "payload is not a JSON object"};
    }
    if (!doc.contains("name") || !doc["name"].is_string()) {
      return FormatError{FormatErrorKind::MalformedToolJson, "missing string field 'name'"};
    }
    if (!doc.contains("arguments") || !doc["arguments"].is_object() ||
        !doc["arguments"].contains("query") || !doc["arguments"]["query"].is_string()) {
      return FormatError{FormatErrorKind::MalformedToolJson, "missing string field 'arguments.query'"};
    }
    std::string name = doc["name"].get<std::string>();
    std::string query = doc["arguments"]["query"].get<std::string>();
    if (detail::trim(query).empty()) {
      return FormatError{FormatErrorKind::MalformedToolJson, "arguments.query is empty"};
    }
    if (!allowed_tools.count(name)) {
      return FormatError{FormatErrorKind::UnknownTool, "unknown tool '" + name + "'"};
    }
    for (auto it = doc["arguments"].begin(); it != doc["arguments"].end(); ++it) {
      if (it.key() != "query") {
        turn.warnings.push_back("ignored tool argument '" + it.key() + "'");
      }
    }
    turn.action = SearchCall{std::move(name), std::move(query)};
    remainder = outside.substr(0, copen) + outside.substr(cclose + kToolCallClose.size());
  } else {
    auto boxed = extract_boxed(outside);
    if (!boxed.ok()) return boxed.error();
    turn.action = FinalAnswer{boxed.value()};
    // Strip every boxed span; surrounding prose may legitimately remain.
    remainder = outside;
    for (std::size_t open = remainder.find(kBoxedOpen); open != std::string::npos;
         open = remainder.find(kBoxedOpen)) {
      std::size_t close = detail::boxed_body_end(remainder, open);
      if (close == std::string::npos) {
        return FormatError{FormatErrorKind::UnclosedTag, "unterminated \\boxed{"};
      }
      remainder.erase(open, close + 1 - open);
    }
  }

  if (contains_reserved_tag(remainder)) {
    return FormatError{FormatErrorKind::UnclosedTag, "stray reserved tag outside the action"};
  }
  return turn;
}

// Acting context: the question plus the running memory, nothing else.
// Byte-stable for identical inputs.
inline std::string render_context(std::string_view question, std::string_view memory) {
  std::string out;
  out.reserve(question.size() + memory.size() + 48);
  out.append(kQuestionOpen).append(question).append(kQuestionClose);
  out.push_back('\n');
  out.append(kMemoryOpen).append(memory).append(kMemoryClose);
  return out;
}

// Search results -> one <tool_response> block. Per passage, in rank order: a
// quoted title line, then the passage text; passages separated by blank lines.
// Works over anything with .title and .body string members.
template <typename PassageRange>
std::string render_observation(const PassageRange& passages) {
  assert(std::begin(passages) != std::end(passages));
  std::string out;
  out.append(kToolResponseOpen).push_back('\n');
  bool first = true;
  for (const auto& p : passages) {
    if (!first) out.push_back('\n');
    first = false;
    out.push_back('"');
    out.append(p.title);
    out.append("\"\n");
    out.append(p.body);
    out.push_back('\n');
  }
  out.append(kToolResponseClose);
  return out;
}

inline bool is_tool_response_block(std::string_view text) {
  auto t = detail::trim(text);
  return t.size() >= kToolResponseOpen.size() + kToolResponseClose.size() &&
         t.substr(0, kToolResponseOpen.size()) == kToolResponseOpen &&
         t.substr(t.size() - kToolResponseClose.size()) == kToolResponseClose &&
         detail::count_occurrences(t, kToolResponseOpen) == 1 &&
         detail::count_occurrences(t, kToolResponseClose) == 1;
}

// Inverse of render_context, for inputs free of reserved tag substrings.
inline ParseResult<std::pair<std::string, std::string>> parse_context(std::string_view text) {
  auto grab = [&](std::string_view open, std::string_view close,
                  std::string* out) -> bool {
    std::size_t b = text.find(open);
    if (b == std::string_view::npos) return false;
    std::size_t body = b + open.size();
    std::size_t e = text.find(close, body);
    if (e == std::string_view::npos) return false;
    out->assign(text.substr(body, e - body));
    return true;
  };
  std::pair<std::string, std::string> qm;
  if (!grab(kQuestionOpen, kQuestionClose, &qm.first)) {
    return FormatError{FormatErrorKind::UnclosedTag, "no <question> span"};
  }
  if (!grab(kMemoryOpen, kMemoryClose, &qm.second)) {
    return FormatError{FormatErrorKind::MissingMemoryBlock, "no <memory> span"};
  }
  return qm;
}

}  // namespace memsearch
