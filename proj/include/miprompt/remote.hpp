#pragma once

/**
 * HTTP backend for completion endpoints that expose next-token logprobs.
 * Split out of backend.hpp so programs that only ever replay fixtures or
 * mocks do not pay for the HTTP client.
 */

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "backend.hpp"
#include "core.hpp"

namespace miprompt {

namespace detail {

struct ParsedEndpoint {
  std::string base;  // scheme://host[:port]
  std::string path;  // leading slash, "/" when absent
};

inline ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("backend: endpoint must include a scheme: " + endpoint);
  }
  const auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

}  // namespace detail

/**
 * Queries are cache-first when a ResponseCache is attached: a hit skips the
 * network entirely, a miss is fetched, validated, stored, then returned.
 * Rate-limit responses retry with doubling delays before giving up.
 */
class RemoteBackend final : public Backend {
 public:
  RemoteBackend(BackendDescriptor desc,
                std::shared_ptr<ResponseCache> cache = nullptr)
      : desc_(validate_descriptor(std::move(desc))),
        endpoint_(detail::parse_endpoint(desc_.endpoint)),
        cache_(std::move(cache)) {
    if (desc_.kind != BackendKind::remote) {
      throw ConfigError("backend: RemoteBackend requires kind=remote");
    }
    if (!desc_.auth_env.empty()) {
      const char* token = std::getenv(desc_.auth_env.c_str());
      if (token == nullptr || *token == '\0') {
        throw ConfigError("backend: auth env var " + desc_.auth_env +
                          " is not set");
      }
      bearer_token_ = token;
    }
  }

  const BackendDescriptor& descriptor() const override { return desc_; }

  TokenTopK query_logprobs(const std::string& prompt) override {
    require_prompt(prompt);
    const std::string hash = prompt_hash_hex(prompt);
    if (cache_) {
      if (auto hit = cache_->lookup(desc_.id, hash, desc_.top_k)) {
        return *std::move(hit);
      }
    }
    TokenTopK response = fetch(prompt, hash);
    if (cache_) {
      cache_->store({desc_.id, hash, desc_.top_k, response, now_rfc3339()});
    }
    return response;
  }

  /// Network round-trips performed, cache hits excluded. For tests.
  std::size_t fetch_count() const { return fetches_.load(); }

 private:
  TokenTopK fetch(const std::string& prompt, const std::string& hash) {
    nlohmann::ordered_json body;
    body["prompt"] = prompt;
    body["max_tokens"] = 1;
    body["logprobs"] = desc_.top_k;
    body["temperature"] = 0;
    const std::string payload = body.dump();

    auto delay = desc_.retry_initial_delay;
    for (int attempt = 0;; ++attempt) {
      httplib::Client client(endpoint_.base);
      const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(
          desc_.request_timeout);
      client.set_connection_timeout(seconds.count() > 0 ? seconds.count() : 1);
      client.set_read_timeout(seconds.count() > 0 ? seconds.count() : 1);
      httplib::Headers headers;
      if (!bearer_token_.empty()) {
        headers.emplace("Authorization", "Bearer " + bearer_token_);
      }

      auto result = client.Post(endpoint_.path, headers, payload,
                                "application/json");
      ++fetches_;
      if (!result) {
        throw TransportError("POST " + desc_.endpoint + ": " +
                             httplib::to_string(result.error()));
      }
      if (result->status == 429) {
        if (attempt >= desc_.max_retries) {
          throw RateLimitedError(desc_.id + ": still rate limited after " +
                                 std::to_string(attempt + 1) + " attempts");
        }
        std::this_thread::sleep_for(delay);
        delay *= 2;
        continue;
      }
      if (result->status < 200 || result->status >= 300) {
        throw TransportError("POST " + desc_.endpoint + ": HTTP " +
                             std::to_string(result->status));
      }
      return parse_response(result->body, hash);
    }
  }

  static TokenTopK parse_response(const std::string& body,
                                  const std::string& hash) {
    try {
      const auto doc = nlohmann::json::parse(body);
      const auto& choices = doc.at("choices");
      if (!choices.is_array() || choices.empty()) {
        throw MalformedResponseError("choices is empty");
      }
      const auto& top = choices.at(0).at("logprobs").at("top_logprobs");
      if (!top.is_array() || top.empty()) {
        throw MalformedResponseError("top_logprobs is empty");
      }
      const auto& table = top.at(0);
      if (!table.is_object()) {
        throw MalformedResponseError("top_logprobs[0] is not an object");
      }
      std::vector<TokenEntry> entries;
      entries.reserve(table.size());
      for (const auto& [token, logprob] : table.items()) {
        if (!logprob.is_number()) {
          throw MalformedResponseError("logprob for token is not a number");
        }
        entries.push_back({token, logprob.get<double>()});
      }
      return TokenTopK(std::move(entries), hash);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedResponseError(e.what());
    }
  }

  BackendDescriptor desc_;
  detail::ParsedEndpoint endpoint_;
  std::shared_ptr<ResponseCache> cache_;
  std::string bearer_token_;
  std::atomic<std::size_t> fetches_{0};
};

}  // namespace miprompt
