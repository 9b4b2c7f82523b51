#pragma once

// OpenAI-compatible chat-completions and embeddings over HTTP(S).

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "manyopt/embed.hpp"
#include "manyopt/error.hpp"
#include "manyopt/gateway.hpp"
#include "manyopt/prompt.hpp"

namespace manyopt {

struct HttpEndpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix without trailing slash, e.g. "/v1"

  static HttpEndpoint parse(const std::string& base_url) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos)
      throw ValidationError("base_url must start with http:// or https://: " + base_url);
    auto path_start = base_url.find('/', scheme_end + 3);
    HttpEndpoint e;
    e.origin = base_url.substr(0, path_start);
    e.path = path_start == std::string::npos ? "" : base_url.substr(path_start);
    while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
    return e;
  }
};

struct HttpBackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-3.5-turbo";
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 60.0;
  int attempts = 3;
  double backoff_ms = 500.0;  // doubled after each failed attempt
};

namespace detail {

inline httplib::Headers auth_headers(const std::string& env) {
  httplib::Headers h;
  if (const char* key = std::getenv(env.c_str()); key && *key)
    h.emplace("Authorization", std::string("Bearer ") + key);
  return h;
}

/// POST with retries on transport errors and non-2xx statuses.
inline nlohmann::json post_json(const HttpBackendConfig& cfg, const std::string& route,
                                const nlohmann::json& body) {
  const auto ep = HttpEndpoint::parse(cfg.base_url);
  std::string last_error;
  double backoff = cfg.backoff_ms;
  const int attempts = std::max(1, cfg.attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Client cli(ep.origin);
    const auto secs = static_cast<time_t>(cfg.timeout_s);
    const auto usecs = static_cast<time_t>((cfg.timeout_s - double(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    auto res = cli.Post(ep.path + route, auth_headers(cfg.api_key_env), body.dump(),
                        "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300);
    } else {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        last_error = std::string("malformed response body: ") + e.what();
      }
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff));
      backoff *= 2.0;
    }
  }
  throw BackendError(route + " failed after " + std::to_string(attempts) + " attempts: " + last_error,
                     attempts, true);
}

}  // namespace detail

/// Wire body for a query: {model, messages, temperature, max_tokens[, seed]}.
inline nlohmann::json chat_request_body(const std::string& model, const ModelQuery& q) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : prompt::render_messages(q))
    messages.push_back({{"role", m.role}, {"content", m.content}});
  nlohmann::json body{{"model", model},
                      {"messages", messages},
                      {"temperature", q.decoding.temperature},
                      {"max_tokens", q.decoding.max_tokens}};
  if (q.decoding.seed) body["seed"] = *q.decoding.seed;
  return body;
}

class HttpChatBackend final : public Backend {
public:
  explicit HttpChatBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    HttpEndpoint::parse(cfg_.base_url);
  }

  std::string id() const override { return "http:" + cfg_.model + "@" + cfg_.base_url; }

  std::string cache_material(const ModelQuery& q) const override {
    return chat_request_body(cfg_.model, q).at("messages").dump();
  }

  ModelReply complete(const ModelQuery& q) override {
    const auto body = chat_request_body(cfg_.model, q);
    const auto start = std::chrono::steady_clock::now();
    auto j = detail::post_json(cfg_, "/chat/completions", body);
    const auto end = std::chrono::steady_clock::now();
    ModelReply r;
    r.backend_id = id();
    r.latency_ms = std::chrono::duration<double, std::milli>(end - start).count();
    try {
      const auto& content = j.at("choices").at(0).at("message").at("content");
      r.text = content.is_null() ? "" : content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("chat completion response lacks choices[0].message.content: ") +
                             e.what(),
                         1, false);
    }
    if (j.contains("usage") && j["usage"].is_object())
      r.usage = TokenUsage{j["usage"].value("prompt_tokens", std::int64_t{0}),
                           j["usage"].value("completion_tokens", std::int64_t{0})};
    return r;
  }

private:
  HttpBackendConfig cfg_;
};

/// POST {base_url}/embeddings with {model, input}.
class HttpEmbeddingSource final : public EmbeddingSource {
public:
  explicit HttpEmbeddingSource(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {}

  std::vector<std::vector<double>> vectors(const std::vector<std::string>& items) override {
    auto j = detail::post_json(cfg_, "/embeddings", {{"model", cfg_.model}, {"input", items}});
    std::vector<std::vector<double>> out(items.size());
    const auto& data = j.at("data");
    if (data.size() != items.size())
      throw BackendError("embeddings endpoint returned " + std::to_string(data.size()) +
                             " vectors for " + std::to_string(items.size()) + " items",
                         1, false);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto idx = data[i].value("index", i);
      out.at(idx) = data[i].at("embedding").get<std::vector<double>>();
    }
    return out;
  }

private:
  HttpBackendConfig cfg_;
};

}  // namespace manyopt
