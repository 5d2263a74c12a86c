#pragma once

#include <algorithm>
#include <chrono>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "memsearch/backend.hpp"

// Live client for a chat-completions-compatible service. Split out of
// backend.hpp so the scripted-mock path does not pull in the HTTP stack.

namespace memsearch {

struct HttpOptions {
  std::string base_url;  // e.g. http://127.0.0.1:8000/v1
  std::string model;
  int max_attempts = 3;           // connection failures / timeouts only
  int initial_backoff_ms = 1000;  // doubles per retry
  int read_timeout_s = 120;
};

// POST {base}/chat/completions with {model, messages, temperature,
// max_tokens, stop, seed}; reads the first choice's message content.
// Non-2xx responses error immediately with the status; connection-level
// failures retry with exponential backoff. Message order and content pass
// through untouched.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpOptions options) : options_(std::move(options)) {
    split_base_url(options_.base_url, &host_, &path_prefix_);
  }

  std::string generate(const GenRequest& request, const GenMeta&) override {
    const std::string body = request_body(request, options_.model).dump();
    const std::string path = path_prefix_ + "/chat/completions";

    int backoff_ms = options_.initial_backoff_ms;
    for (int attempt = 1;; ++attempt) {
      // one client per call: keeps concurrent generate() calls independent
      httplib::Client client(host_);
      client.set_read_timeout(options_.read_timeout_s, 0);
      client.set_connection_timeout(options_.read_timeout_s, 0);

      auto res = client.Post(path, body, "application/json");
      if (!res) {
        if (attempt >= options_.max_attempts) {
          throw TransportError(0, "request to " + host_ + path + " failed after " +
                                      std::to_string(attempt) +
                                      " attempts: " + httplib::to_string(res.error()));
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
        backoff_ms *= 2;
        continue;
      }
      if (res->status < 200 || res->status >= 300) {
        throw TransportError(res->status,
                             "HTTP " + std::to_string(res->status) + " from " + host_ + path);
      }
      nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded() || !j.contains("choices") || j["choices"].empty() ||
          !j["choices"][0].contains("message") ||
          !j["choices"][0]["message"].contains("content") ||
          !j["choices"][0]["message"]["content"].is_string()) {
        throw TransportError(res->status, "malformed completion response body");
      }
      return j["choices"][0]["message"]["content"].get<std::string>();
    }
  }

  // Request body serialization, exposed for tests.
  static nlohmann::ordered_json request_body(const GenRequest& request, const std::string& model) {
    nlohmann::ordered_json body;
    body["model"] = model;
    auto msgs = nlohmann::ordered_json::array();
    for (const auto& m : request.messages) {
      msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    body["messages"] = std::move(msgs);
    body["temperature"] = request.temperature;
    body["max_tokens"] = request.max_new_tokens;
    if (!request.stop.empty()) body["stop"] = request.stop;
    if (request.seed) body["seed"] = *request.seed;
    return body;
  }

 private:
  static void split_base_url(const std::string& base, std::string* host, std::string* prefix) {
    std::size_t scheme = base.find("://");
    std::size_t path = scheme == std::string::npos ? base.find('/') : base.find('/', scheme + 3);
    if (path == std::string::npos) {
      *host = base;
      prefix->clear();
    } else {
      *host = base.substr(0, path);
      *prefix = base.substr(path);
      while (!prefix->empty() && prefix->back() == '/') prefix->pop_back();
    }
  }

  HttpOptions options_;
  std::string host_;
  std::string path_prefix_;
};

}  // namespace memsearch
