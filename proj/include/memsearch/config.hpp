#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "memsearch/agent.hpp"
#include "memsearch/backend.hpp"
#include "memsearch/grpo.hpp"
#include "memsearch/http_backend.hpp"
#include "memsearch/prompts.hpp"

// JSON run configuration shared by the CLI subcommands. Every field has a
// default; unknown keys are rejected so typos fail loudly instead of
// silently running with defaults.

namespace memsearch {

struct BackendConfig {
  std::string type = "scripted";  // "scripted" | "http"
  std::string script;             // scripted: JSONL script path
  std::string base_url;           // http: service root
  std::string model = "memsearch";
  int max_attempts = 3;
  int initial_backoff_ms = 1000;

  void validate() const {
    if (type != "scripted" && type != "http")
      throw std::invalid_argument("backend type must be 'scripted' or 'http'");
    if (type == "scripted" && script.empty())
      throw std::invalid_argument("scripted backend needs a 'script' path");
    if (type == "http" && base_url.empty())
      throw std::invalid_argument("http backend needs a 'base_url'");
  }
};

struct RunConfig {
  EpisodeConfig episode;
  TrainConfig train;
  BackendConfig backend;
  std::size_t group_size = 5;
  std::size_t workers = 1;
  std::string prompts_dir;  // empty: use the builtin prompt set

  PromptSet prompts() const {
    return prompts_dir.empty() ? PromptSet::builtin() : PromptSet::load_dir(prompts_dir);
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto& a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline EpisodeConfig episode_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j,
                     {"mode", "max_turns", "memory_budget", "context_window", "retrieval_k",
                      "temperature", "seed", "tool_name", "max_new_tokens"},
                     "episode");
  EpisodeConfig c;
  if (j.contains("mode")) c.mode = agent_mode_from_string(j["mode"].get<std::string>());
  c.max_turns = j.value("max_turns", c.max_turns);
  c.memory_budget = j.value("memory_budget", c.memory_budget);
  c.context_window = j.value("context_window", c.context_window);
  c.retrieval_k = j.value("retrieval_k", c.retrieval_k);
  c.temperature = j.value("temperature", c.temperature);
  c.seed = j.value("seed", c.seed);
  c.tool_name = j.value("tool_name", c.tool_name);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.validate();
  return c;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, {"clip_epsilon", "kl_beta", "std_floor", "ratio_mode"}, "train");
  TrainConfig c;
  c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
  c.kl_beta = j.value("kl_beta", c.kl_beta);
  c.std_floor = j.value("std_floor", c.std_floor);
  if (j.contains("ratio_mode"))
    c.ratio_mode = ratio_mode_from_string(j["ratio_mode"].get<std::string>());
  c.validate();
  return c;
}

inline BackendConfig backend_config_from_json(const nlohmann::json& j) {
  detail::check_keys(
      j, {"type", "script", "base_url", "model", "max_attempts", "initial_backoff_ms"}, "backend");
  BackendConfig c;
  c.type = j.value("type", c.type);
  c.script = j.value("script", c.script);
  c.base_url = j.value("base_url", c.base_url);
  c.model = j.value("model", c.model);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.initial_backoff_ms = j.value("initial_backoff_ms", c.initial_backoff_ms);
  c.validate();
  return c;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, {"episode", "train", "backend", "group_size", "workers", "prompts_dir"},
                     "config");
  RunConfig c;
  if (j.contains("episode")) c.episode = episode_config_from_json(j["episode"]);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("backend")) c.backend = backend_config_from_json(j["backend"]);
  c.group_size = j.value("group_size", c.group_size);
  c.workers = j.value("workers", c.workers);
  c.prompts_dir = j.value("prompts_dir", c.prompts_dir);
  if (c.group_size < 2) throw std::invalid_argument("group_size must be at least 2");
  if (c.workers < 1) throw std::invalid_argument("workers must be at least 1");
  return c;
}

// Relative script/prompt paths in the file resolve against the config
// file's own directory, so a config works from any working directory.
inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw std::runtime_error(path + ": malformed config JSON");
  RunConfig config = run_config_from_json(j);

  const auto dir = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (dir / p).string();
  };
  resolve(config.backend.script);
  resolve(config.prompts_dir);
  return config;
}

inline std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  config.validate();
  if (config.type == "scripted")
    return std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(config.script));
  HttpOptions options;
  options.base_url = config.base_url;
  options.model = config.model;
  options.max_attempts = config.max_attempts;
  options.initial_backoff_ms = config.initial_backoff_ms;
  return std::make_unique<HttpBackend>(options);
}

}  // namespace memsearch
